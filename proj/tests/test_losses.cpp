#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "slukd/losses.hpp"
#include "slukd/models.hpp"
#include "slukd/rng.hpp"

using namespace slukd;

namespace {

SlotLogits zeros_logits(const SlotSpaces& s) {
    SlotLogits l;
    l.action.assign(s.actions, 0.0);
    l.object.assign(s.objects, 0.0);
    l.location.assign(s.locations, 0.0);
    return l;
}

SlotLogits random_logits(Rng& rng, const SlotSpaces& s) {
    SlotLogits l = zeros_logits(s);
    for (double& v : l.action) v = rng.normal(0.0, 2.0);
    for (double& v : l.object) v = rng.normal(0.0, 2.0);
    for (double& v : l.location) v = rng.normal(0.0, 2.0);
    return l;
}

}  // namespace

TEST_CASE("cross_entropy: uniform logits give the sum of class-count logs") {
    SlotSpaces s{6, 14, 4};
    double ce = cross_entropy(zeros_logits(s), {2, 5, 1});
    CHECK(ce == doctest::Approx(std::log(6.0) + std::log(14.0) + std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("cross_entropy: saturated correct logits give near-zero loss") {
    SlotSpaces s{6, 14, 4};
    SlotLogits l = zeros_logits(s);
    l.action[3] = 1000.0;
    l.object[0] = 1000.0;
    l.location[2] = 1000.0;
    CHECK(cross_entropy(l, {3, 0, 2}) < 1e-6);
}

TEST_CASE("cross_entropy: single-slot contribution matches the direct softmax oracle") {
    SlotSpaces s{6, 14, 4};
    SlotLogits l = zeros_logits(s);
    l.action[0] = 1.0;
    const double full = cross_entropy(l, {0, 0, 0});
    const double others = std::log(14.0) + std::log(4.0);
    const double oracle = -std::log(std::exp(1.0) / (std::exp(1.0) + 5.0));
    CHECK(full - others == doctest::Approx(oracle).epsilon(1e-12));
}

TEST_CASE("cross_entropy: out-of-range label is a hard error") {
    SlotSpaces s{6, 14, 4};
    CHECK_THROWS_AS(cross_entropy(zeros_logits(s), {6, 0, 0}), std::invalid_argument);
    CHECK_THROWS_AS(cross_entropy(zeros_logits(s), {0, -1, 0}), std::invalid_argument);
}

TEST_CASE("distance: zero at identical inputs, symmetric, known values") {
    Rng rng(7);
    for (int i = 0; i < 20; ++i) {
        std::vector<double> x;
        for (int j = 0; j < 8; ++j) x.push_back(rng.normal(0.0, 3.0));
        std::vector<double> y;
        for (int j = 0; j < 8; ++j) y.push_back(rng.normal(0.0, 3.0));
        for (DistanceKind k : {DistanceKind::MSE, DistanceKind::SmoothL1}) {
            CHECK(distance(k, x, x) == 0.0);
            CHECK(distance(k, x, y) == doctest::Approx(distance(k, y, x)).epsilon(1e-15));
            CHECK(distance(k, x, y) >= 0.0);
        }
    }
    CHECK(distance(DistanceKind::MSE, {0.0}, {2.0}) == doctest::Approx(4.0));
    CHECK(distance(DistanceKind::SmoothL1, {0.0}, {2.0}) == doctest::Approx(1.5));
    CHECK(distance(DistanceKind::SmoothL1, {0.0}, {0.5}) == doctest::Approx(0.125));
    CHECK(distance(DistanceKind::SmoothL1, {0.0}, {0.5}) ==
          doctest::Approx(distance(DistanceKind::MSE, {0.0}, {0.5}) / 2.0));
    CHECK_THROWS_AS(distance(DistanceKind::MSE, {0.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("smooth L1 is continuous and once-differentiable at the unit residual") {
    auto f = [](double r) { return distance(DistanceKind::SmoothL1, {r}, {0.0}); };
    const double eps = 1e-8;
    CHECK(std::fabs(f(1.0 + eps) - f(1.0 - eps)) < 1e-7);
    const double left = (f(1.0) - f(1.0 - eps)) / eps;
    const double right = (f(1.0 + eps) - f(1.0)) / eps;
    CHECK(left == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(right == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("kd_loss: endpoints select exactly one source") {
    Rng rng(11);
    SlotSpaces s{6, 14, 4};
    SlotLogits slu = random_logits(rng, s);
    SlotLogits teacher = random_logits(rng, s);
    SlotLogits professor = random_logits(rng, s);
    for (DistanceKind k : {DistanceKind::MSE, DistanceKind::SmoothL1}) {
        const double t_only = kd_loss(k, slu, teacher, std::nullopt, 0.0);
        CHECK(t_only == distance(k, concat_logits(slu), concat_logits(teacher)));
        const double p_only = kd_loss(k, slu, std::nullopt, professor, 1.0);
        CHECK(p_only == distance(k, concat_logits(slu), concat_logits(professor)));
        const double mid = kd_loss(k, slu, teacher, professor, 0.5);
        CHECK(mid == doctest::Approx(0.5 * (t_only + p_only)).epsilon(1e-15));
    }
}

TEST_CASE("kd_loss: affine in gamma") {
    Rng rng(13);
    SlotSpaces s{6, 14, 4};
    SlotLogits slu = random_logits(rng, s);
    SlotLogits teacher = random_logits(rng, s);
    SlotLogits professor = random_logits(rng, s);
    for (DistanceKind k : {DistanceKind::MSE, DistanceKind::SmoothL1}) {
        const double at0 = kd_loss(k, slu, teacher, professor, 0.0);
        const double at1 = kd_loss(k, slu, teacher, professor, 1.0);
        for (double gamma : {0.1, 0.25, 0.33, 0.5, 0.771, 0.9}) {
            const double direct = kd_loss(k, slu, teacher, professor, gamma);
            CHECK(std::fabs(direct - ((1.0 - gamma) * at0 + gamma * at1)) < 1e-12);
        }
    }
}

TEST_CASE("kd_loss: missing required source is a hard error") {
    Rng rng(17);
    SlotSpaces s{6, 14, 4};
    SlotLogits slu = random_logits(rng, s);
    SlotLogits teacher = random_logits(rng, s);
    CHECK_THROWS_AS(kd_loss(DistanceKind::MSE, slu, std::nullopt, std::nullopt, 0.0),
                    std::invalid_argument);
    CHECK_THROWS_AS(kd_loss(DistanceKind::MSE, slu, teacher, std::nullopt, 0.5),
                    std::invalid_argument);
    CHECK_THROWS_AS(kd_loss(DistanceKind::MSE, slu, teacher, std::nullopt, 1.5),
                    std::invalid_argument);
}

TEST_CASE("total_loss: degenerate weights and the recorded identity") {
    LossBreakdown a = total_loss(1.7, 9.9, 1.0, 0.0);
    CHECK(a.total == 1.7);
    LossBreakdown b = total_loss(1.7, 9.9, 0.0, 1.0);
    CHECK(b.total == 9.9);
    LossBreakdown c = total_loss(2.0, 3.0, 0.9, 0.1);
    CHECK(c.total == doctest::Approx(0.9 * 2.0 + 0.1 * 3.0).epsilon(1e-15));
    CHECK(c.total == c.alpha * c.l_ce + c.beta * c.l_kd);  // exact identity
    CHECK_THROWS_AS(total_loss(1.0, 1.0, -0.1, 0.5), std::invalid_argument);
}

TEST_CASE("graph losses agree with the plain implementations") {
    Rng rng(19);
    SlotSpaces s{3, 5, 2};
    SlotLogits slu = random_logits(rng, s);
    SlotLogits teacher = random_logits(rng, s);
    SlotLabel label{1, 4, 0};

    // cross-entropy, batch of one
    ad::Graph g;
    std::array<ad::NodeId, 3> nodes = {g.input(Tensor::row(slu.action)),
                                       g.input(Tensor::row(slu.object)),
                                       g.input(Tensor::row(slu.location))};
    std::array<std::vector<int>, 3> labels = {
        std::vector<int>{label.action}, std::vector<int>{label.object},
        std::vector<int>{label.location}};
    ad::NodeId ce = ce_loss_node(g, nodes, labels);
    CHECK(g.value(ce).data[0] == doctest::Approx(cross_entropy(slu, label)).epsilon(1e-12));

    // distances on the concat view
    for (DistanceKind k : {DistanceKind::MSE, DistanceKind::SmoothL1}) {
        ad::Graph g2;
        ad::NodeId a = g2.input(Tensor::row(concat_logits(slu)));
        ad::NodeId b = g2.input(Tensor::row(concat_logits(teacher)));
        ad::NodeId d = distance_node(g2, k, a, b);
        CHECK(g2.value(d).data[0] ==
              doctest::Approx(distance(k, concat_logits(slu), concat_logits(teacher)))
                  .epsilon(1e-12));
    }
}

TEST_CASE("total gradient equals alpha*grad(ce) + beta*grad(kd) on a student batch") {
    SlotSpaces s{3, 4, 2};
    StudentModel m = StudentModel::init(5, 4, s, 23);
    Rng rng(29);
    std::vector<FrameSeq> batch;
    for (int i = 0; i < 2; ++i) {
        FrameSeq fs;
        for (int t = 0; t < 3; ++t) {
            std::vector<double> frame(5);
            double total = 0.0;
            for (double& v : frame) {
                v = rng.uniform(0.01, 1.0);
                total += v;
            }
            for (double& v : frame) v /= total;
            fs.push_back(frame);
        }
        batch.push_back(fs);
    }
    std::array<std::vector<int>, 3> labels = {std::vector<int>{0, 2}, std::vector<int>{1, 3},
                                              std::vector<int>{0, 1}};
    Tensor teacher_logits(2, s.total());
    for (double& v : teacher_logits.data) v = rng.normal(0.0, 2.0);

    const double alpha = 0.7, beta = 0.3;
    enum Mode { Total, CeOnly, KdOnly };
    auto run = [&](Mode mode, std::vector<ParamBinding>& bindings) {
        auto g = std::make_unique<ad::Graph>(2048);
        std::vector<const FrameSeq*> ptrs;
        for (const auto& fs : batch) ptrs.push_back(&fs);
        StudentBatchGraph b = student_forward_batch(*g, m, ptrs);
        bindings = b.params;
        ad::NodeId ce = ce_loss_node(*g, {b.action, b.object, b.location}, labels);
        ad::NodeId slu = g->concat_cols({b.action, b.object, b.location});
        ad::NodeId kd = kd_loss_node(*g, DistanceKind::SmoothL1, slu,
                                     g->constant(teacher_logits), std::nullopt, 0.0);
        switch (mode) {
            case Total: g->backward(total_loss_node(*g, ce, kd, alpha, beta)); break;
            case CeOnly: g->backward(ce); break;
            case KdOnly: g->backward(kd); break;
        }
        return g;
    };

    std::vector<ParamBinding> bt, bc, bk;
    auto gt = run(Total, bt);
    auto gc = run(CeOnly, bc);
    auto gk = run(KdOnly, bk);
    for (size_t p = 0; p < bt.size(); ++p) {
        const Tensor& dt = gt->grad(bt[p].node);
        const Tensor& dc = gc->grad(bc[p].node);
        const Tensor& dk = gk->grad(bk[p].node);
        for (size_t i = 0; i < dt.size(); ++i) {
            const double expect = alpha * dc.data[i] + beta * dk.data[i];
            CHECK(dt.data[i] == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}
