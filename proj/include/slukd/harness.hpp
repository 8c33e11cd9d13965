#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "slukd/corpus.hpp"
#include "slukd/losses.hpp"
#include "slukd/models.hpp"
#include "slukd/schedulers.hpp"

namespace slukd::harness {

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

struct ErrorRates {
    double full = 1.0;  // any slot wrong
    double action = 1.0;
    double object = 1.0;
    double location = 1.0;
    int count = 0;
};

struct EpochLog {
    int epoch = 0;
    double l_ce = 0.0;
    double l_kd = 0.0;
    double alpha = 1.0;
    double beta = 0.0;
    double total = 0.0;
    double batch_err = 0.0;  // mean pre-update full-intent error over the epoch
};

struct RunResult {
    ErrorRates test;
    std::vector<double> train_error_trace;  // one entry per epoch
    std::vector<EpochLog> loss_trace;
    bool converged = false;
    bool saw_non_finite = false;
    double wall_seconds = 0.0;
    std::string config_echo;  // JSON
};

// Non-convergence rule: final-epoch train accuracy below 0.5 or a non-finite
// loss anywhere. An empty trace (zero-epoch run) counts as non-converged.
bool detect_nonconvergence(const std::vector<double>& train_error_trace, bool saw_non_finite);

// ---------------------------------------------------------------------------
// Teacher / professor fine-tuning on clean scripts
// ---------------------------------------------------------------------------

struct TeacherTrainConfig {
    HeadKind variant = HeadKind::ClsPooled;
    int epochs = 30;
    int batch_size = 32;
    double lr = 1e-3;
    uint64_t seed = 1;
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 2;
    int ff_dim = 64;

    std::string to_json() const;
};

struct TeacherRun {
    TextEncoderModel model;
    RunResult result;
};

TeacherRun train_teacher(const TeacherTrainConfig& cfg, const corpus::Dataset& train,
                         const corpus::Dataset& test, SlotSpaces slots, int vocab_size);

// ---------------------------------------------------------------------------
// Logit files (JSON-lines: {id, logits:{action, object, location}})
// ---------------------------------------------------------------------------

using LogitTable = std::map<int, SlotLogits>;

LogitTable logits_from_model(TextEncoderModel& model, const corpus::Dataset& data);
void export_logits(TextEncoderModel& model, const corpus::Dataset& data,
                   const std::string& path);
LogitTable read_logits(const std::string& path, SlotSpaces expected);

// ---------------------------------------------------------------------------
// Student distillation
// ---------------------------------------------------------------------------

enum class GammaMode { Teacher, Professor, Hybrid, None };  // None = CE-only baseline

const char* gamma_mode_name(GammaMode m);
GammaMode gamma_mode_from_name(const std::string& name);

struct DistillConfig {
    DistanceKind distance = DistanceKind::SmoothL1;
    GammaMode gamma_mode = GammaMode::Teacher;
    Schedule schedule = Schedule::fixed(0.1);
    int epochs = 50;
    int batch_size = 32;
    double lr = 1e-3;
    uint64_t seed = 1;
    double data_fraction = 1.0;
    int hidden = 64;
    SlotSpaces slots;  // label spaces of the corpus

    std::string to_json() const;
    std::string cell_key() const;  // canonical string hashed into config_hash
};

struct DistillRun {
    StudentModel model;
    RunResult result;
};

// Trains a student on rendered frames. Teacher/professor logits are constants;
// the sources required by gamma_mode must be present and must cover every
// training example id.
DistillRun distill(const DistillConfig& cfg, const corpus::Dataset& train,
                   const corpus::Dataset& test, const LogitTable* teacher,
                   const LogitTable* professor);

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

ErrorRates evaluate_student(StudentModel& model, const corpus::Dataset& data);
ErrorRates evaluate_encoder(TextEncoderModel& model, const corpus::Dataset& data);

// Scores a prediction list against dataset labels (full-intent: any slot wrong).
ErrorRates score_predictions(const std::vector<SlotLabel>& preds, const corpus::Dataset& data);

// Evaluates the text model on recognizer-corrupted scripts.
ErrorRates pipeline_baseline(TextEncoderModel& model, const corpus::Dataset& data,
                             const corpus::NoiseChannel& channel, double rate, uint64_t seed);

// ---------------------------------------------------------------------------
// Experiment grid
// ---------------------------------------------------------------------------

struct GridCell {
    std::string name;
    DistillConfig config;  // gamma_mode None marks the no-KD baseline
};

struct GridConfig {
    std::vector<GridCell> cells;
    std::vector<uint64_t> seeds;
    int jobs = 1;
};

struct GridRow {
    std::string config_hash;
    uint64_t seed = 0;
    std::string distance, gamma_mode, schedule;
    double fraction = 1.0;
    double test_err = 1.0;
    bool converged = false;
    double wall_s = 0.0;
};

// Runs every (cell, seed) pair not already present in out_csv (resumable),
// appends per-run rows, and rewrites the aggregate CSV. Returns all rows,
// including previously existing ones.
std::vector<GridRow> run_grid(const GridConfig& grid, const corpus::Dataset& train,
                              const corpus::Dataset& test, const LogitTable* teacher,
                              const LogitTable* professor, const std::string& out_csv,
                              const std::string& aggregate_csv);

std::string config_hash(const DistillConfig& cfg);

}  // namespace slukd::harness
