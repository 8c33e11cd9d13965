#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "slukd/autodiff.hpp"
#include "slukd/models.hpp"

namespace slukd {

// Distance used for the distillation term. SmoothL1 (reported as "mae" in
// CLI/outputs) uses the unit transition point.
enum class DistanceKind { MSE, SmoothL1 };

const char* distance_name(DistanceKind k);
DistanceKind distance_from_name(const std::string& name);

struct LossBreakdown {
    double l_ce = 0.0;
    double l_kd = 0.0;
    double alpha = 1.0;
    double beta = 0.0;
    double total = 0.0;
};

// Sum over the three slots of softmax cross-entropy against the label.
double cross_entropy(const SlotLogits& pred, const SlotLabel& label);

// MSE: mean of squared residuals. SmoothL1: mean of the unit Huber kernel.
double distance(DistanceKind kind, const std::vector<double>& a, const std::vector<double>& b);

// Eq-style hybrid distillation loss on concatenated logit views:
// (1-gamma) * D(slu, teacher) + gamma * D(slu, professor).
// The teacher source is required when gamma < 1, the professor when gamma > 0.
double kd_loss(DistanceKind kind, const SlotLogits& f_slu,
               const std::optional<SlotLogits>& f_teacher,
               const std::optional<SlotLogits>& f_professor, double gamma);

// total = alpha * l_ce + beta * l_kd, with the inputs echoed for logging.
LossBreakdown total_loss(double l_ce, double l_kd, double alpha, double beta);

// ---------------------------------------------------------------------------
// Graph builders used by the training loops. Slot logits arrive as three
// B x K nodes; labels as per-slot index vectors.
// ---------------------------------------------------------------------------

// Mean over the batch of the per-example three-slot cross-entropy.
ad::NodeId ce_loss_node(ad::Graph& g, const std::array<ad::NodeId, 3>& slot_logits,
                        const std::array<std::vector<int>, 3>& labels);

// Mean over all entries of the residual kernel between two same-shape nodes.
ad::NodeId distance_node(ad::Graph& g, DistanceKind kind, ad::NodeId a, ad::NodeId b);

// Hybrid KD on concatenated logits; teacher/professor enter as constants.
ad::NodeId kd_loss_node(ad::Graph& g, DistanceKind kind, ad::NodeId slu_concat,
                        std::optional<ad::NodeId> teacher_concat,
                        std::optional<ad::NodeId> professor_concat, double gamma);

ad::NodeId total_loss_node(ad::Graph& g, ad::NodeId l_ce, ad::NodeId l_kd, double alpha,
                           double beta);

}  // namespace slukd
