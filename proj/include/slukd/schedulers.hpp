#pragma once

#include <string>

namespace slukd {

// KD-weight schedule: beta_t on the distillation term, alpha_t = 1 - beta_t.
struct Schedule {
    enum class Kind { Fixed, Err, Exp, Tri };
    Kind kind = Kind::Fixed;
    double fixed_beta = 0.0;  // Fixed only
    int max_epochs = 0;       // Tri only; mu = T/2 is always derived

    static Schedule fixed(double beta);
    static Schedule err();
    static Schedule exp();
    static Schedule tri(int max_epochs);

    // CLI form: fixed:<beta> | err | exp | tri. Tri takes its T from
    // the run's epoch count.
    static Schedule parse(const std::string& text, int epochs_for_tri);

    std::string name() const;
};

// beta_t for epoch t (1-indexed). batch_err is the current batch's full-intent
// error; it is validated always and consumed only by the Err schedule.
double schedule_beta(const Schedule& s, int t, double batch_err);

// 1 - beta, with beta validated to [0,1].
double schedule_alpha(double beta);

}  // namespace slukd
