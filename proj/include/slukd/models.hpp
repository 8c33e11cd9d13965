#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "slukd/autodiff.hpp"
#include "slukd/rng.hpp"
#include "slukd/tensor.hpp"

namespace slukd {

// Class counts of the three slots. "none" is an ordinary class inside
// object/location.
struct SlotSpaces {
    int actions = 0;
    int objects = 0;
    int locations = 0;
    int total() const { return actions + objects + locations; }
    bool operator==(const SlotSpaces&) const = default;
};

// Per-slot pre-softmax logit vectors.
struct SlotLogits {
    std::vector<double> action;
    std::vector<double> object;
    std::vector<double> location;
};

// Class indices of the three slots of one example.
struct SlotLabel {
    int action = 0;
    int object = 0;
    int location = 0;
    bool operator==(const SlotLabel&) const = default;
};

// Fixed order: action || object || location.
std::vector<double> concat_logits(const SlotLogits& s);
SlotLogits split_logits(const std::vector<double>& v, const SlotSpaces& spaces);

// One utterance as the student sees it: word-posterior rows, each |vocab| wide.
using FrameSeq = std::vector<std::vector<double>>;

// Leaf nodes a model contributed to a graph, for reading gradients back.
struct ParamBinding {
    std::string name;
    Tensor* param;
    ad::NodeId node;
};

// ---------------------------------------------------------------------------
// Student: GRU over posterior frames, slot heads on the final hidden state.
// ---------------------------------------------------------------------------

struct StudentModel {
    int input_dim = 0;  // posterior frame dimension == |vocab|
    int hidden = 64;
    SlotSpaces slots;
    Tensor wz, uz, bz;  // update gate
    Tensor wr, ur, br;  // reset gate
    Tensor wh, uh, bh;  // candidate state
    Tensor head_action_w, head_action_b;
    Tensor head_object_w, head_object_b;
    Tensor head_location_w, head_location_b;

    static StudentModel init(int input_dim, int hidden, SlotSpaces slots, uint64_t seed);
    void visit_params(const std::function<void(const std::string&, Tensor&)>& f);
};

struct StudentBatchGraph {
    std::vector<ParamBinding> params;
    ad::NodeId action = -1;    // B x actions
    ad::NodeId object = -1;    // B x objects
    ad::NodeId location = -1;  // B x locations
};

// Builds the forward graph for a batch of frame sequences.
StudentBatchGraph student_forward_batch(ad::Graph& g, StudentModel& m,
                                        const std::vector<const FrameSeq*>& batch);

// Value-only single-example forward.
SlotLogits student_forward(StudentModel& m, const FrameSeq& frames);

// ---------------------------------------------------------------------------
// Teacher / professor: token embedding + sinusoidal positions + transformer
// encoder stack. The two share the architecture and differ in the head:
// teacher reads the [CLS] position, professor applies the head per token
// position and max-pools (pads excluded).
// ---------------------------------------------------------------------------

enum class HeadKind { ClsPooled, MaxPooled };

struct EncoderLayerParams {
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ff1_w, ff1_b, ff2_w, ff2_b;
    Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias;
};

struct TextEncoderModel {
    HeadKind head = HeadKind::ClsPooled;
    int vocab = 0;  // surface tokens use ids [0, vocab); [CLS]=vocab, [PAD]=vocab+1
    int d_model = 32;
    int n_layers = 2;
    int n_heads = 2;
    int ff_dim = 64;
    bool positional = true;
    SlotSpaces slots;
    Tensor embedding;  // (vocab+2) x d_model
    std::vector<EncoderLayerParams> layers;
    Tensor head_w, head_b;  // d_model -> total slot classes

    int cls_id() const { return vocab; }
    int pad_id() const { return vocab + 1; }

    static TextEncoderModel init(HeadKind head, int vocab, SlotSpaces slots, uint64_t seed,
                                 int d_model = 32, int n_layers = 2, int n_heads = 2,
                                 int ff_dim = 64, bool positional = true);
    void visit_params(const std::function<void(const std::string&, Tensor&)>& f);
};

// Optional capture of internals for tests.
struct EncoderTrace {
    std::vector<ad::NodeId> attention;   // softmax outputs, one per (example, layer, head)
    std::vector<ad::NodeId> ln_outputs;  // layer-norm outputs
    std::vector<ad::NodeId> attn_ctx;    // pre-projection attention context, per (example, layer)
    std::vector<ad::NodeId> per_position_logits;  // professor head inputs to the max pool
};

struct EncoderBatchGraph {
    std::vector<ParamBinding> params;
    ad::NodeId action = -1;
    ad::NodeId object = -1;
    ad::NodeId location = -1;
};

using TokenSeq = std::vector<int>;

// Builds the forward graph for a batch of token sequences ([CLS] prepended
// internally; [PAD] allowed only as a suffix).
EncoderBatchGraph encoder_forward_batch(ad::Graph& g, TextEncoderModel& m,
                                        const std::vector<const TokenSeq*>& batch,
                                        EncoderTrace* trace = nullptr);

// Value-only single-example forwards.
SlotLogits encoder_forward(TextEncoderModel& m, const TokenSeq& tokens);

// Sinusoidal positional encoding table, rows = positions.
Tensor sinusoidal_positions(int length, int d_model);

}  // namespace slukd
