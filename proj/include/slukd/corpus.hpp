#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "slukd/models.hpp"
#include "slukd/rng.hpp"

namespace slukd::corpus {

// One command template: a token pattern with optional {object} / {location}
// placeholders, expanded over the listed slot values under a fixed action.
struct Template {
    std::string action;
    std::vector<std::string> objects;
    std::vector<std::string> locations;
    std::vector<std::string> pattern;
};

struct GrammarConfig {
    std::vector<std::string> actions;
    std::vector<std::string> objects;    // includes "none"
    std::vector<std::string> locations;  // includes "none"
    std::vector<Template> templates;
};

// A fully expanded grammar: every valid (token sequence -> label) pair, the
// token vocabulary, and the slot label spaces.
class Grammar {
public:
    struct Instantiation {
        std::vector<int> tokens;
        SlotLabel label;
    };

    static Grammar build(const GrammarConfig& config);
    static GrammarConfig default_config();

    const std::vector<std::string>& actions() const { return actions_; }
    const std::vector<std::string>& objects() const { return objects_; }
    const std::vector<std::string>& locations() const { return locations_; }
    const std::vector<std::string>& vocab() const { return vocab_; }
    const std::vector<Instantiation>& instantiations() const { return instantiations_; }

    SlotSpaces slots() const;
    int vocab_size() const { return static_cast<int>(vocab_.size()); }
    int intent_count() const { return intent_count_; }

    int token_id(const std::string& token) const;
    const std::string& token_name(int id) const;
    int action_id(const std::string& name) const;
    int object_id(const std::string& name) const;
    int location_id(const std::string& name) const;

private:
    std::vector<std::string> actions_, objects_, locations_, vocab_;
    std::map<std::string, int> token_ids_;
    std::vector<Instantiation> instantiations_;
    int intent_count_ = 0;
};

// One corpus entry: ground-truth token script, slot label, and (once rendered)
// the word-posterior frame sequence the student consumes.
struct Example {
    int id = 0;
    std::vector<int> tokens;
    SlotLabel label;
    FrameSeq frames;
};

using Dataset = std::vector<Example>;

// Acoustic-uncertainty surrogate: a token confusion matrix plus a Dirichlet
// sharpness. Rendering draws what the recognizer "heard" from the confusion
// row of the true token, then perturbs that row into a posterior frame.
struct NoiseChannel {
    std::vector<std::vector<double>> confusion;  // row-stochastic, V x V
    int frames_per_token_min = 1;
    int frames_per_token_max = 3;
    double dirichlet_concentration = 50.0;  // +inf renders rows exactly

    // self-probability 0.8, two confusable neighbours at 0.08 each, remainder
    // spread uniformly
    static NoiseChannel default_for(int vocab_size);
    static NoiseChannel identity(int vocab_size);  // zero-noise channel
    void validate() const;
};

// n examples drawn uniformly over the grammar's instantiations; frames empty.
Dataset generate(const Grammar& grammar, int n, uint64_t seed);

// Fills example.frames from the channel; deterministic per (seed, example.id).
Example render_frames(const Example& example, const NoiseChannel& channel, uint64_t seed);
Dataset render_frames(const Dataset& dataset, const NoiseChannel& channel, uint64_t seed);

// Deterministic shuffle-split; fractions must sum to 1.
struct Split {
    Dataset train, valid, test;
};
Split split(const Dataset& dataset, double train_frac, double valid_frac, double test_frac,
            uint64_t seed);

// Stratified subset of ceil(fraction * n) examples; every intent keeps at
// least one example whenever the budget allows.
Dataset subsample(const Dataset& train, double fraction, uint64_t seed);

// Simulated recognizer output: each token independently replaced with
// probability rate, drawn from its confusion row with the true token excluded.
std::vector<int> corrupt_tokens(const Example& example, const NoiseChannel& channel, double rate,
                                uint64_t seed);

// JSON-lines dataset files; token and label fields are written as strings.
void write_dataset(const std::string& path, const Dataset& dataset, const Grammar& grammar);
Dataset read_dataset(const std::string& path, const Grammar& grammar);

// Channel config document (confusion spec or explicit matrix).
NoiseChannel channel_from_json_file(const std::string& path, int vocab_size);
void write_channel_json(const std::string& path, const NoiseChannel& channel);

// Grammar config document; omitted fields fall back to the built-in grammar.
GrammarConfig grammar_config_from_json_file(const std::string& path);

}  // namespace slukd::corpus
