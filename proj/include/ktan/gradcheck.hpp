#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ktan/losses.hpp"
#include "ktan/rng.hpp"

// Central finite-difference checking for every differentiable operation and
// loss. Runs in double precision; single precision makes the difference
// quotients unreliable.
namespace ktan::gradcheck {

// Central-difference estimate per coordinate. This is the oracle side of the
// gradient checks; it never touches the tape's backward rules.
template <typename T>
Tensor<T> finite_difference_grad(const std::function<T(const Tensor<T>&)>& f, const Tensor<T>& x, T eps) {
    if (!(eps > T(0))) throw ShapeError("finite_difference_grad: eps must be positive");
    Tensor<T> g(x.shape());
    Tensor<T> probe = x;
    for (int64_t i = 0; i < x.numel(); ++i) {
        const T saved = probe[i];
        probe[i] = saved + eps;
        const T hi = f(probe);
        probe[i] = saved - eps;
        const T lo = f(probe);
        probe[i] = saved;
        g[i] = (hi - lo) / (2 * eps);
    }
    return g;
}

// Max relative error with the denominator floored at 1e-8.
template <typename T>
double max_rel_error(const Tensor<T>& analytic, const Tensor<T>& fd) {
    check_same_shape(analytic, fd, "max_rel_error");
    double worst = 0;
    for (int64_t i = 0; i < analytic.numel(); ++i) {
        const double a = analytic[i], b = fd[i];
        const double denom = std::max({std::abs(a), std::abs(b), 1e-8});
        worst = std::max(worst, std::abs(a - b) / denom);
    }
    return worst;
}

struct Row {
    std::string op;
    double max_rel_err;
};

inline bool all_pass(const std::vector<Row>& rows, double tol = 1e-4) {
    for (const auto& r : rows)
        if (!(r.max_rel_err < tol)) return false;
    return true;
}

namespace detail {

using D = double;

// Scalarize a tensor output with a fixed random weighting so index bugs in the
// backward rules cannot cancel out.
inline Tensor<D> weighting(const Shape& s, uint64_t seed) {
    Tensor<D> r(s);
    Rng rng(seed);
    rng.fill_uniform(r, -1.0, 1.0);
    return r;
}

inline Tensor<D> random_tensor(const Shape& s, uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Tensor<D> t(s);
    Rng rng(seed);
    rng.fill_uniform(t, lo, hi);
    return t;
}

// Values pushed away from zero so the relu kink stays out of the eps window.
inline Tensor<D> kink_free_tensor(const Shape& s, uint64_t seed) {
    Tensor<D> t = random_tensor(s, seed);
    for (int64_t i = 0; i < t.numel(); ++i) t[i] += (t[i] >= 0 ? 0.25 : -0.25);
    return t;
}

// Distinct, well-separated values so max-pool argmax routing is stable.
inline Tensor<D> distinct_tensor(const Shape& s, uint64_t seed) {
    Tensor<D> t(s);
    Rng rng(seed);
    auto perm = rng.permutation(t.numel());
    for (int64_t i = 0; i < t.numel(); ++i)
        t[i] = 0.013 * static_cast<double>(perm[static_cast<size_t>(i)]) - 0.005 * static_cast<double>(t.numel());
    return t;
}

// One differentiable input within a scalar-valued graph.
struct Case {
    std::string name;
    Tensor<D> input;
    // builds the scalar value for a candidate input; used for both the
    // analytic pass (via tape) and the finite-difference oracle
    std::function<D(const Tensor<D>&, Tensor<D>* analytic_grad)> eval;
};

inline double run_case(const Case& c, double eps) {
    Tensor<D> analytic;
    c.eval(c.input, &analytic);
    auto f = [&](const Tensor<D>& x) { return c.eval(x, nullptr); };
    Tensor<D> fd = finite_difference_grad<D>(f, c.input, eps);
    return max_rel_error(analytic, fd);
}

// Runs `build` on a fresh tape; when `analytic` is requested, also runs
// backward and extracts the gradient of the probed leaf.
inline D tape_eval(const Tensor<D>& x, Tensor<D>* analytic,
                   const std::function<Var(Tape<D>&, Var)>& build) {
    Tape<D> tape;
    Var leaf = tape.leaf(x, true);
    Var root = build(tape, leaf);
    const D value = tape.value(root).item();
    if (analytic) {
        tape.backward(root);
        *analytic = tape.grad(leaf);
    }
    return value;
}

}  // namespace detail

// The full per-operation suite; each differentiable operation and loss
// appears exactly once, probed on its least trivial input.
inline std::vector<Row> run_all(double eps = 1e-5) {
    using detail::D;
    using detail::tape_eval;
    std::vector<Row> rows;

    auto add_row = [&](const std::string& name, std::initializer_list<detail::Case> cases) {
        double worst = 0;
        for (const auto& c : cases) worst = std::max(worst, detail::run_case(c, eps));
        rows.push_back({name, worst});
    };

    // conv2d: stride 2, padding 1, checked against input, filters, bias
    {
        ConvGeometry g{3, 4, 3, 3, 2, 2, 1, 1};
        Tensor<D> in = detail::random_tensor({2, 3, 5, 5}, 11);
        Tensor<D> flt = detail::random_tensor({4, 3, 3, 3}, 12);
        Tensor<D> bias = detail::random_tensor({4}, 13);
        Tensor<D> w = detail::weighting({2, 4, 3, 3}, 14);
        auto reduce = [w](Tape<D>& t, Var out) {
            return ops::sum_all(t, ops::mul(t, out, t.constant(w)));
        };
        add_row("conv2d",
                {{"input", in,
                  [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          return reduce(t, ops::conv2d(t, leaf, t.constant(flt), t.constant(bias), g));
                      });
                  }},
                 {"filters", flt,
                  [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          return reduce(t, ops::conv2d(t, t.constant(in), leaf, t.constant(bias), g));
                      });
                  }},
                 {"bias", bias, [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          return reduce(t, ops::conv2d(t, t.constant(in), t.constant(flt), leaf, g));
                      });
                  }}});
    }

    // dense: input, weights, bias
    {
        Tensor<D> in = detail::random_tensor({3, 7}, 21);
        Tensor<D> wt = detail::random_tensor({7, 4}, 22);
        Tensor<D> bias = detail::random_tensor({4}, 23);
        Tensor<D> w = detail::weighting({3, 4}, 24);
        auto reduce = [w](Tape<D>& t, Var out) {
            return ops::sum_all(t, ops::mul(t, out, t.constant(w)));
        };
        add_row("dense",
                {{"input", in,
                  [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          return reduce(t, ops::dense(t, leaf, t.constant(wt), t.constant(bias)));
                      });
                  }},
                 {"weights", wt,
                  [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          return reduce(t, ops::dense(t, t.constant(in), leaf, t.constant(bias)));
                      });
                  }},
                 {"bias", bias, [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          return reduce(t, ops::dense(t, t.constant(in), t.constant(wt), leaf));
                      });
                  }}});
    }

    {
        Tensor<D> in = detail::kink_free_tensor({2, 3, 4, 4}, 31);
        Tensor<D> w = detail::weighting({2, 3, 4, 4}, 32);
        add_row("relu", {{"input", in, [=](const Tensor<D>& x, Tensor<D>* a) {
                              return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                                  return ops::sum_all(t, ops::mul(t, ops::relu(t, leaf), t.constant(w)));
                              });
                          }}});
    }

    {
        PoolGeometry pg{2, 2};
        Tensor<D> in = detail::distinct_tensor({2, 2, 4, 6}, 41);
        Tensor<D> w = detail::weighting({2, 2, 2, 3}, 42);
        add_row("max_pool2d", {{"input", in, [=](const Tensor<D>& x, Tensor<D>* a) {
                                    return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                                        return ops::sum_all(
                                            t, ops::mul(t, ops::max_pool2d(t, leaf, pg), t.constant(w)));
                                    });
                                }}});
    }

    {
        Tensor<D> in = detail::random_tensor({2, 3, 2, 2}, 51);
        Tensor<D> w = detail::weighting({2, 12}, 52);
        add_row("flatten", {{"input", in, [=](const Tensor<D>& x, Tensor<D>* a) {
                                 return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                                     return ops::sum_all(t, ops::mul(t, ops::flatten(t, leaf), t.constant(w)));
                                 });
                             }}});
    }

    {
        Tensor<D> in = detail::random_tensor({3, 5}, 61);
        Tensor<D> w = detail::weighting({3, 5}, 62);
        add_row("softmax", {{"logits", in, [=](const Tensor<D>& x, Tensor<D>* a) {
                                 return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                                     return ops::sum_all(t, ops::mul(t, ops::softmax(t, leaf), t.constant(w)));
                                 });
                             }}});
        add_row("log_softmax", {{"logits", in, [=](const Tensor<D>& x, Tensor<D>* a) {
                                     return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                                         return ops::sum_all(
                                             t, ops::mul(t, ops::log_softmax(t, leaf), t.constant(w)));
                                     });
                                 }}});
    }

    {
        Tensor<D> in = detail::random_tensor({4, 3}, 71);
        Tensor<D> w = detail::weighting({4, 3}, 72);
        add_row("sigmoid", {{"input", in, [=](const Tensor<D>& x, Tensor<D>* a) {
                                 return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                                     return ops::sum_all(t, ops::mul(t, ops::sigmoid(t, leaf), t.constant(w)));
                                 });
                             }}});
    }

    {
        Tensor<D> logits = detail::random_tensor({4, 5}, 81);
        std::vector<int64_t> labels{1, 0, 4, 2};
        add_row("cross_entropy", {{"logits", logits, [=](const Tensor<D>& x, Tensor<D>* a) {
                                       return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                                           return cross_entropy(t, leaf, labels).var;
                                       });
                                   }}});
    }

    {
        Tensor<D> student = detail::random_tensor({4, 5}, 91);
        Tensor<D> teacher = detail::random_tensor({4, 5}, 92);
        std::vector<int64_t> labels{0, 3, 2, 4};
        add_row("kd_loss", {{"student_logits", student, [=](const Tensor<D>& x, Tensor<D>* a) {
                                 return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                                     return kd_loss(t, leaf, teacher, 4.0, 0.9, labels).var;
                                 });
                             }}});
    }

    {
        Tensor<D> m_s = detail::random_tensor({2, 3, 4, 4}, 101);
        Tensor<D> m_t = detail::random_tensor({2, 3, 4, 4}, 102);
        add_row("mse_feature_loss", {{"student_map", m_s, [=](const Tensor<D>& x, Tensor<D>* a) {
                                          return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                                              return mse_feature_loss(t, m_t, leaf).var;
                                          });
                                      }}});
    }

    {
        Tensor<D> d_t = detail::random_tensor({5, 1}, 111, 0.15, 0.85);
        Tensor<D> d_s = detail::random_tensor({5, 1}, 112, 0.15, 0.85);
        add_row("discriminator_loss",
                {{"d_teacher", d_t,
                  [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          return discriminator_loss(t, leaf, t.constant(d_s)).var;
                      });
                  }},
                 {"d_student", d_s, [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          return discriminator_loss(t, t.constant(d_t), leaf).var;
                      });
                  }}});
        add_row("generator_adversarial_loss",
                {{"d_student", d_s, [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          return generator_adversarial_loss(t, leaf).var;
                      });
                  }}});
    }

    // student_total_loss probed through a composite graph: the student feature
    // map feeds a classifier head, a one-conv discriminator stack, and the
    // feature MSE, so the adversarial gradient is checked through D's forward.
    {
        Tensor<D> fm = detail::kink_free_tensor({2, 3, 4, 4}, 121);
        Tensor<D> target_fm = detail::random_tensor({2, 3, 4, 4}, 122);
        Tensor<D> cls_w = detail::random_tensor({48, 4}, 123, -0.3, 0.3);
        Tensor<D> cls_b = detail::random_tensor({4}, 124, -0.1, 0.1);
        ConvGeometry dg{3, 2, 3, 3, 1, 1, 1, 1};
        Tensor<D> d_flt = detail::random_tensor({2, 3, 3, 3}, 125, -0.4, 0.4);
        Tensor<D> d_bias = detail::random_tensor({2}, 126, -0.1, 0.1);
        Tensor<D> d_w = detail::random_tensor({8, 1}, 127, -0.4, 0.4);
        Tensor<D> d_b = detail::random_tensor({1}, 128, -0.1, 0.1);
        std::vector<int64_t> labels{1, 3};
        add_row("student_total_loss",
                {{"student_map", fm, [=](const Tensor<D>& x, Tensor<D>* a) {
                      return tape_eval(x, a, [&](Tape<D>& t, Var leaf) {
                          Var logits = ops::dense(t, ops::flatten(t, leaf), t.constant(cls_w), t.constant(cls_b));
                          auto ce = cross_entropy(t, logits, labels);
                          Var h = ops::relu(t, ops::conv2d(t, leaf, t.constant(d_flt), t.constant(d_bias), dg));
                          h = ops::max_pool2d(t, h, PoolGeometry{2, 2});
                          Var d_out = ops::sigmoid(
                              t, ops::dense(t, ops::flatten(t, h), t.constant(d_w), t.constant(d_b)));
                          auto adv = generator_adversarial_loss(t, d_out);
                          auto mse = mse_feature_loss(t, target_fm, leaf);
                          return student_total_loss(t, ce, adv, mse, 0.6, 0.5).var;
                      });
                  }}});
    }

    return rows;
}

}  // namespace ktan::gradcheck
