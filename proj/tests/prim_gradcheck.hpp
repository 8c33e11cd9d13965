#pragma once

// Finite-difference checks for every autodiff primitive, shared between the
// unit suite and the acceptance runner.

#include <functional>
#include <string>
#include <vector>

#include "gradcheck.hpp"
#include "slukd/autodiff.hpp"
#include "slukd/rng.hpp"

namespace slukd::test {

struct PrimCheck {
    std::string name;
    double max_rel_err = 0.0;
    int instances = 0;
};

namespace detail {

using Builder = std::function<ad::NodeId(ad::Graph&, const std::vector<ad::NodeId>&)>;

// Random tensor with entries away from kinks of relu/huber/max-pool.
inline Tensor rand_tensor(Rng& rng, int r, int c, double lo = -2.0, double hi = 2.0) {
    Tensor t(r, c);
    for (double& v : t.data) {
        do {
            v = rng.uniform(lo, hi);
        } while (std::fabs(v) < 1e-3 || std::fabs(std::fabs(v) - 1.0) < 1e-3);
    }
    return t;
}

inline double check_one(const Builder& build, std::vector<Tensor*> inputs, Rng& rng) {
    ad::Graph probe;
    std::vector<ad::NodeId> ids;
    for (Tensor* t : inputs) ids.push_back(probe.input(*t));
    ad::NodeId out = build(probe, ids);
    Tensor w = rand_tensor(rng, probe.value(out).rows(), probe.value(out).cols());

    auto eval = [&]() {
        ad::Graph g;
        std::vector<ad::NodeId> in;
        for (Tensor* t : inputs) in.push_back(g.input(*t));
        ad::NodeId o = build(g, in);
        return g.value(g.sum_all(g.mul(o, g.constant(w)))).data[0];
    };

    ad::Graph g;
    std::vector<ad::NodeId> in;
    for (Tensor* t : inputs) in.push_back(g.input(*t));
    ad::NodeId o = build(g, in);
    g.backward(g.sum_all(g.mul(o, g.constant(w))));

    double worst = 0.0;
    for (size_t i = 0; i < inputs.size(); ++i) {
        Tensor fd = fd_gradient(eval, *inputs[i]);
        worst = std::max(worst, grad_rel_error(fd, g.grad(in[i])));
    }
    return worst;
}

}  // namespace detail

// Runs `instances` random gradient checks per primitive; returns per-primitive
// worst relative error vs central finite differences (step 1e-5).
inline std::vector<PrimCheck> check_all_primitives(int instances, uint64_t seed) {
    using detail::rand_tensor;
    Rng rng(seed);
    std::vector<PrimCheck> results;

    struct Case {
        std::string name;
        std::function<double(Rng&)> run;
    };

    auto unary = [&](const char* name, auto make_node, double lo = -2.0, double hi = 2.0) {
        return Case{name, [=](Rng& r) {
                        Tensor a = rand_tensor(r, 2 + (int)r.uniform_index(3),
                                               2 + (int)r.uniform_index(4), lo, hi);
                        return detail::check_one(
                            [&](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                return make_node(g, in[0]);
                            },
                            {&a}, r);
                    }};
    };

    std::vector<Case> cases;
    cases.push_back({"matmul", [](Rng& r) {
                         int m = 2 + (int)r.uniform_index(3), k = 2 + (int)r.uniform_index(3),
                             n = 2 + (int)r.uniform_index(3);
                         Tensor a = rand_tensor(r, m, k), b = rand_tensor(r, k, n);
                         return detail::check_one(
                             [](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.matmul(in[0], in[1]);
                             },
                             {&a, &b}, r);
                     }});
    auto binary_same = [&](const char* name, auto make_node) {
        return Case{name, [=](Rng& r) {
                        int m = 2 + (int)r.uniform_index(3), n = 2 + (int)r.uniform_index(4);
                        Tensor a = rand_tensor(r, m, n), b = rand_tensor(r, m, n);
                        return detail::check_one(
                            [&](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                return make_node(g, in[0], in[1]);
                            },
                            {&a, &b}, r);
                    }};
    };
    cases.push_back(binary_same("add", [](ad::Graph& g, ad::NodeId a, ad::NodeId b) {
        return g.add(a, b);
    }));
    cases.push_back(binary_same("sub", [](ad::Graph& g, ad::NodeId a, ad::NodeId b) {
        return g.sub(a, b);
    }));
    cases.push_back(binary_same("mul", [](ad::Graph& g, ad::NodeId a, ad::NodeId b) {
        return g.mul(a, b);
    }));
    cases.push_back({"add_rowvec", [](Rng& r) {
                         int m = 2 + (int)r.uniform_index(3), n = 2 + (int)r.uniform_index(4);
                         Tensor a = detail::rand_tensor(r, m, n), b = detail::rand_tensor(r, 1, n);
                         return detail::check_one(
                             [](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.add_rowvec(in[0], in[1]);
                             },
                             {&a, &b}, r);
                     }});
    cases.push_back({"scale_rows", [](Rng& r) {
                         int m = 2 + (int)r.uniform_index(3), n = 2 + (int)r.uniform_index(4);
                         Tensor a = detail::rand_tensor(r, m, n), b = detail::rand_tensor(r, m, 1);
                         return detail::check_one(
                             [](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.scale_rows(in[0], in[1]);
                             },
                             {&a, &b}, r);
                     }});
    cases.push_back(unary("tanh", [](ad::Graph& g, ad::NodeId a) { return g.tanh(a); }));
    cases.push_back(unary("sigmoid", [](ad::Graph& g, ad::NodeId a) { return g.sigmoid(a); }));
    cases.push_back(unary("relu", [](ad::Graph& g, ad::NodeId a) { return g.relu(a); }));
    cases.push_back(unary("log", [](ad::Graph& g, ad::NodeId a) { return g.log(a); }, 0.3, 3.0));
    cases.push_back(
        unary("softmax_rows", [](ad::Graph& g, ad::NodeId a) { return g.softmax_rows(a); }));
    cases.push_back(unary("log_softmax_rows",
                          [](ad::Graph& g, ad::NodeId a) { return g.log_softmax_rows(a); }));
    cases.push_back(unary("square", [](ad::Graph& g, ad::NodeId a) { return g.square(a); }));
    cases.push_back(
        unary("huber_unit", [](ad::Graph& g, ad::NodeId a) { return g.huber_unit(a); }));
    cases.push_back(
        unary("transpose", [](ad::Graph& g, ad::NodeId a) { return g.transpose(a); }));
    cases.push_back({"slice_rows", [](Rng& r) {
                         Tensor a = detail::rand_tensor(r, 5, 3);
                         return detail::check_one(
                             [](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.slice_rows(in[0], 1, 3);
                             },
                             {&a}, r);
                     }});
    cases.push_back({"slice_cols", [](Rng& r) {
                         Tensor a = detail::rand_tensor(r, 3, 6);
                         return detail::check_one(
                             [](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.slice_cols(in[0], 2, 3);
                             },
                             {&a}, r);
                     }});
    cases.push_back({"concat_rows", [](Rng& r) {
                         Tensor a = detail::rand_tensor(r, 2, 3), b = detail::rand_tensor(r, 3, 3);
                         return detail::check_one(
                             [](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.concat_rows({in[0], in[1]});
                             },
                             {&a, &b}, r);
                     }});
    cases.push_back({"concat_cols", [](Rng& r) {
                         Tensor a = detail::rand_tensor(r, 3, 2), b = detail::rand_tensor(r, 3, 4);
                         return detail::check_one(
                             [](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.concat_cols({in[0], in[1]});
                             },
                             {&a, &b}, r);
                     }});
    cases.push_back(
        unary("max_pool_rows", [](ad::Graph& g, ad::NodeId a) { return g.max_pool_rows(a); }));
    cases.push_back(
        unary("mean_rows", [](ad::Graph& g, ad::NodeId a) { return g.mean_rows(a); }));
    cases.push_back(unary("mean_all", [](ad::Graph& g, ad::NodeId a) { return g.mean_all(a); }));
    cases.push_back(unary("sum_all", [](ad::Graph& g, ad::NodeId a) { return g.sum_all(a); }));
    cases.push_back(
        unary("scale", [](ad::Graph& g, ad::NodeId a) { return g.scale(a, -1.7); }));
    cases.push_back({"embedding", [](Rng& r) {
                         Tensor table = detail::rand_tensor(r, 6, 4);
                         std::vector<int> ids;
                         for (int i = 0; i < 5; ++i) ids.push_back((int)r.uniform_index(6));
                         return detail::check_one(
                             [ids](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.embedding(in[0], ids);
                             },
                             {&table}, r);
                     }});
    cases.push_back({"pick_per_row", [](Rng& r) {
                         Tensor a = detail::rand_tensor(r, 4, 5);
                         std::vector<int> cols;
                         for (int i = 0; i < 4; ++i) cols.push_back((int)r.uniform_index(5));
                         return detail::check_one(
                             [cols](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.pick_per_row(in[0], cols);
                             },
                             {&a}, r);
                     }});
    cases.push_back({"layer_norm_rows", [](Rng& r) {
                         int m = 2 + (int)r.uniform_index(3), n = 3 + (int)r.uniform_index(4);
                         Tensor x = detail::rand_tensor(r, m, n);
                         Tensor gain = detail::rand_tensor(r, 1, n);
                         Tensor bias = detail::rand_tensor(r, 1, n);
                         return detail::check_one(
                             [](ad::Graph& g, const std::vector<ad::NodeId>& in) {
                                 return g.layer_norm_rows(in[0], in[1], in[2]);
                             },
                             {&x, &gain, &bias}, r);
                     }});

    for (auto& c : cases) {
        PrimCheck pc;
        pc.name = c.name;
        pc.instances = instances;
        Rng local = rng.child(std::hash<std::string>{}(c.name));
        for (int i = 0; i < instances; ++i)
            pc.max_rel_err = std::max(pc.max_rel_err, c.run(local));
        results.push_back(std::move(pc));
    }
    return results;
}

}  // namespace slukd::test
