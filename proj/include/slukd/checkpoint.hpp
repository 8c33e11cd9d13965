#pragma once

#include <string>

#include "slukd/models.hpp"

namespace slukd {

// Model checkpoints are single JSON documents carrying hyperparameters, the
// init seed, and every parameter tensor as {shape, data}. Doubles round-trip
// bit-exactly through the serializer.

void save_student(const StudentModel& m, uint64_t seed, const std::string& path);
StudentModel load_student(const std::string& path);

void save_encoder(const TextEncoderModel& m, uint64_t seed, const std::string& path);
TextEncoderModel load_encoder(const std::string& path);

// Peek at the "kind" field ("student" | "teacher" | "professor").
std::string checkpoint_kind(const std::string& path);

}  // namespace slukd
