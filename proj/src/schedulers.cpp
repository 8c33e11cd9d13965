#include "slukd/schedulers.hpp"

#include <cmath>
#include <stdexcept>

namespace slukd {

Schedule Schedule::fixed(double beta) {
    if (beta < 0.0 || beta > 1.0)
        throw std::invalid_argument("schedule: fixed beta must be in [0,1], got " +
                                    std::to_string(beta));
    Schedule s;
    s.kind = Kind::Fixed;
    s.fixed_beta = beta;
    return s;
}

Schedule Schedule::err() {
    Schedule s;
    s.kind = Kind::Err;
    return s;
}

Schedule Schedule::exp() {
    Schedule s;
    s.kind = Kind::Exp;
    return s;
}

Schedule Schedule::tri(int max_epochs) {
    if (max_epochs < 1)
        throw std::invalid_argument("schedule: tri needs at least one epoch");
    Schedule s;
    s.kind = Kind::Tri;
    s.max_epochs = max_epochs;
    return s;
}

Schedule Schedule::parse(const std::string& text, int epochs_for_tri) {
    if (text == "err") return err();
    if (text == "exp") return exp();
    if (text == "tri") return tri(epochs_for_tri);
    if (text.rfind("fixed:", 0) == 0) {
        try {
            return fixed(std::stod(text.substr(6)));
        } catch (const std::invalid_argument&) {
            throw std::invalid_argument("schedule: cannot parse beta in '" + text + "'");
        }
    }
    throw std::invalid_argument("schedule: unknown '" + text +
                                "' (expected fixed:<beta> | err | exp | tri)");
}

std::string Schedule::name() const {
    switch (kind) {
        case Kind::Fixed: {
            // trim trailing zeros for readable CSV cells
            std::string b = std::to_string(fixed_beta);
            while (b.size() > 1 && b.back() == '0') b.pop_back();
            if (b.back() == '.') b.pop_back();
            return "fixed:" + b;
        }
        case Kind::Err: return "err";
        case Kind::Exp: return "exp";
        case Kind::Tri: return "tri";
    }
    return "?";
}

double schedule_beta(const Schedule& s, int t, double batch_err) {
    if (t < 1)
        throw std::invalid_argument("schedule: epoch index must be >= 1, got " +
                                    std::to_string(t));
    if (batch_err < 0.0 || batch_err > 1.0)
        throw std::invalid_argument("schedule: batch error must be in [0,1], got " +
                                    std::to_string(batch_err));
    double beta = 0.0;
    switch (s.kind) {
        case Schedule::Kind::Fixed:
            beta = s.fixed_beta;
            break;
        case Schedule::Kind::Err:
            beta = batch_err;
            break;
        case Schedule::Kind::Exp:
            beta = std::exp(1.0 - static_cast<double>(t));
            break;
        case Schedule::Kind::Tri: {
            const double mu = static_cast<double>(s.max_epochs) / 2.0;
            const double ramp = -std::fabs(static_cast<double>(t) - mu) / (0.5 * mu) + 1.0;
            beta = 0.1 * std::max(0.0, ramp);
            break;
        }
    }
    return std::min(1.0, std::max(0.0, beta));
}

double schedule_alpha(double beta) {
    if (beta < 0.0 || beta > 1.0)
        throw std::invalid_argument("alpha: beta must be in [0,1], got " + std::to_string(beta));
    return 1.0 - beta;
}

}  // namespace slukd
