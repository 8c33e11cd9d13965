#include "slukd/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace slukd {

const char* distance_name(DistanceKind k) {
    return k == DistanceKind::MSE ? "mse" : "mae";
}

DistanceKind distance_from_name(const std::string& name) {
    if (name == "mse") return DistanceKind::MSE;
    if (name == "mae" || name == "smooth_l1") return DistanceKind::SmoothL1;
    throw std::invalid_argument("unknown distance: " + name);
}

// Stable per-slot term: logsumexp(x) - x[label].
static double slot_ce(const std::vector<double>& logits, int label, const char* slot) {
    if (label < 0 || label >= static_cast<int>(logits.size()))
        throw std::invalid_argument(std::string("cross_entropy: ") + slot + " label " +
                                    std::to_string(label) + " outside " +
                                    std::to_string(logits.size()) + " classes");
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double total = 0.0;
    for (double v : logits) total += std::exp(v - mx);
    return mx + std::log(total) - logits[label];
}

double cross_entropy(const SlotLogits& pred, const SlotLabel& label) {
    return slot_ce(pred.action, label.action, "action") +
           slot_ce(pred.object, label.object, "object") +
           slot_ce(pred.location, label.location, "location");
}

double distance(DistanceKind kind, const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size())
        throw std::invalid_argument("distance: length mismatch " + std::to_string(a.size()) +
                                    " vs " + std::to_string(b.size()));
    if (a.empty()) throw std::invalid_argument("distance: empty vectors");
    double acc = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double r = a[i] - b[i];
        if (kind == DistanceKind::MSE) {
            acc += r * r;
        } else {
            const double ar = std::fabs(r);
            acc += ar < 1.0 ? 0.5 * r * r : ar - 0.5;
        }
    }
    return acc / static_cast<double>(a.size());
}

double kd_loss(DistanceKind kind, const SlotLogits& f_slu,
               const std::optional<SlotLogits>& f_teacher,
               const std::optional<SlotLogits>& f_professor, double gamma) {
    if (gamma < 0.0 || gamma > 1.0)
        throw std::invalid_argument("kd_loss: gamma must be in [0,1], got " +
                                    std::to_string(gamma));
    if (gamma < 1.0 && !f_teacher)
        throw std::invalid_argument("kd_loss: teacher logits required for gamma < 1");
    if (gamma > 0.0 && !f_professor)
        throw std::invalid_argument("kd_loss: professor logits required for gamma > 0");
    const std::vector<double> slu = concat_logits(f_slu);
    double out = 0.0;
    if (gamma < 1.0) out += (1.0 - gamma) * distance(kind, slu, concat_logits(*f_teacher));
    if (gamma > 0.0) out += gamma * distance(kind, slu, concat_logits(*f_professor));
    return out;
}

LossBreakdown total_loss(double l_ce, double l_kd, double alpha, double beta) {
    if (alpha < 0.0 || beta < 0.0)
        throw std::invalid_argument("total_loss: negative weights (alpha=" +
                                    std::to_string(alpha) + ", beta=" + std::to_string(beta) +
                                    ")");
    LossBreakdown b;
    b.l_ce = l_ce;
    b.l_kd = l_kd;
    b.alpha = alpha;
    b.beta = beta;
    b.total = alpha * l_ce + beta * l_kd;
    return b;
}

ad::NodeId ce_loss_node(ad::Graph& g, const std::array<ad::NodeId, 3>& slot_logits,
                        const std::array<std::vector<int>, 3>& labels) {
    ad::NodeId per_example = -1;
    for (int s = 0; s < 3; ++s) {
        ad::NodeId picked = g.pick_per_row(g.log_softmax_rows(slot_logits[s]), labels[s]);
        per_example = per_example < 0 ? picked : g.add(per_example, picked);
    }
    return g.scale(g.mean_all(per_example), -1.0);
}

ad::NodeId distance_node(ad::Graph& g, DistanceKind kind, ad::NodeId a, ad::NodeId b) {
    ad::NodeId diff = g.sub(a, b);
    return g.mean_all(kind == DistanceKind::MSE ? g.square(diff) : g.huber_unit(diff));
}

ad::NodeId kd_loss_node(ad::Graph& g, DistanceKind kind, ad::NodeId slu_concat,
                        std::optional<ad::NodeId> teacher_concat,
                        std::optional<ad::NodeId> professor_concat, double gamma) {
    if (gamma < 0.0 || gamma > 1.0)
        throw std::invalid_argument("kd_loss: gamma must be in [0,1], got " +
                                    std::to_string(gamma));
    if (gamma < 1.0 && !teacher_concat)
        throw std::invalid_argument("kd_loss: teacher logits required for gamma < 1");
    if (gamma > 0.0 && !professor_concat)
        throw std::invalid_argument("kd_loss: professor logits required for gamma > 0");
    std::optional<ad::NodeId> teacher_term, professor_term;
    if (gamma < 1.0)
        teacher_term = g.scale(distance_node(g, kind, slu_concat, *teacher_concat), 1.0 - gamma);
    if (gamma > 0.0)
        professor_term = g.scale(distance_node(g, kind, slu_concat, *professor_concat), gamma);
    if (teacher_term && professor_term) return g.add(*teacher_term, *professor_term);
    return teacher_term ? *teacher_term : *professor_term;
}

ad::NodeId total_loss_node(ad::Graph& g, ad::NodeId l_ce, ad::NodeId l_kd, double alpha,
                           double beta) {
    if (alpha < 0.0 || beta < 0.0)
        throw std::invalid_argument("total_loss: negative weights");
    return g.add(g.scale(l_ce, alpha), g.scale(l_kd, beta));
}

}  // namespace slukd
