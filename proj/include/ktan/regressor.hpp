#pragma once

#include <string>

#include "ktan/dataset.hpp"
#include "ktan/losses.hpp"
#include "ktan/metrics.hpp"
#include "ktan/optimizer.hpp"

namespace ktan {

// Teacher-to-Student layer geometry: a single convolution mapping the teacher
// feature map (C_t, M_t) onto the student feature map (C_l, M_l) exactly, via
// K_i = M_t,i + 2*P_i - S_i*(M_l,i - 1).
struct RegressorSpec {
    Shape3 teacher_map;
    Shape3 student_map;
    int64_t stride_h = 1, stride_w = 1;
    int64_t pad_h = 0, pad_w = 0;
    int64_t kernel_h = 0, kernel_w = 0;  // solved

    ConvGeometry conv() const {
        return ConvGeometry{teacher_map.c, student_map.c, kernel_h, kernel_w,
                            stride_h,      stride_w,      pad_h,    pad_w};
    }

    void check_invariant() const {
        auto check_axis = [&](int64_t mt, int64_t ml, int64_t k, int64_t s, int64_t p, const char* axis) {
            if (k < 1 || k > mt + 2 * p || (mt + 2 * p - k) % s != 0 || (mt + 2 * p - k) / s + 1 != ml)
                throw GeometryError(std::string("regressor invariant violated on ") + axis + " axis");
        };
        check_axis(teacher_map.h, student_map.h, kernel_h, stride_h, pad_h, "h");
        check_axis(teacher_map.w, student_map.w, kernel_w, stride_w, pad_w, "w");
    }
};

inline RegressorSpec solve_regressor_geometry(Shape3 teacher_map, Shape3 student_map, int64_t stride = 1,
                                              int64_t padding = 0) {
    if (teacher_map.c <= 0 || teacher_map.h <= 0 || teacher_map.w <= 0 || student_map.c <= 0 ||
        student_map.h <= 0 || student_map.w <= 0)
        throw GeometryError("regressor shapes must be positive, teacher " + teacher_map.str() +
                            " student " + student_map.str());
    if (stride < 1 || padding < 0) throw GeometryError("regressor stride must be >= 1 and padding >= 0");

    auto solve_axis = [&](int64_t mt, int64_t ml) {
        const int64_t k = mt + 2 * padding - stride * (ml - 1);
        if (k < 1 || k > mt + 2 * padding)
            throw GeometryError("regressor geometry infeasible: teacher map " + teacher_map.str() +
                                " to student map " + student_map.str() + " needs kernel " +
                                std::to_string(k) + " at stride " + std::to_string(stride) +
                                ", padding " + std::to_string(padding));
        return k;
    };

    RegressorSpec spec;
    spec.teacher_map = teacher_map;
    spec.student_map = student_map;
    spec.stride_h = spec.stride_w = stride;
    spec.pad_h = spec.pad_w = padding;
    spec.kernel_h = solve_axis(teacher_map.h, student_map.h);
    spec.kernel_w = solve_axis(teacher_map.w, student_map.w);
    spec.check_invariant();
    return spec;
}

// The layer's single conv parameters (w_r). Once trained it stays frozen for
// the rest of the pipeline.
template <typename T>
struct RegressorState {
    Tensor<T> weight;  // [C_l, C_t, K_h, K_w]
    Tensor<T> bias;    // [C_l]
    bool trained = false;

    void check_matches(const RegressorSpec& spec) const {
        const Shape expect{spec.student_map.c, spec.teacher_map.c, spec.kernel_h, spec.kernel_w};
        if (weight.shape() != expect || bias.shape() != Shape{spec.student_map.c})
            throw ShapeError("regressor state does not match its spec");
    }
};

template <typename T>
RegressorState<T> init_regressor(const RegressorSpec& spec, Rng& rng) {
    RegressorState<T> st;
    st.weight = Tensor<T>({spec.student_map.c, spec.teacher_map.c, spec.kernel_h, spec.kernel_w});
    const double fan_in = static_cast<double>(spec.teacher_map.c * spec.kernel_h * spec.kernel_w);
    rng.fill_normal(st.weight, std::sqrt(2.0 / fan_in));
    st.bias = Tensor<T>({spec.student_map.c});
    return st;
}

template <typename T>
Tensor<T> apply_regressor(const RegressorSpec& spec, const RegressorState<T>& state, const Tensor<T>& m_t) {
    state.check_matches(spec);
    if (m_t.rank() != 4 || m_t.extent(1) != spec.teacher_map.c || m_t.extent(2) != spec.teacher_map.h ||
        m_t.extent(3) != spec.teacher_map.w)
        throw ShapeError("apply_regressor: input " + shape_str(m_t.shape()) + " does not match teacher map " +
                         spec.teacher_map.str());
    return kernels::conv2d_forward(m_t, state.weight, state.bias, spec.conv());
}

template <typename T>
Var apply_regressor(Tape<T>& tape, const RegressorSpec& spec, Var m_t, Var weight, Var bias) {
    return ops::conv2d(tape, m_t, weight, bias, spec.conv());
}

template <typename T>
struct RegressorTrainConfig {
    int64_t steps = 0;  // Algorithm 1's k
    int64_t batch_size = 32;
    T learning_rate = T(0.2);
    T momentum = T(0.9);
    T weight_decay = T(1e-4);
    uint64_t seed = 1;
};

// Algorithm 1: teacher G and C stay frozen; only w_r (plus, when R's output
// shape differs from what the teacher classifier expects, a throwaway dense
// head trained jointly) is updated by the cross-entropy of C(R(G(i))).
template <typename T>
void train_regressor(const NetworkSpec& teacher_spec, const NetworkState<T>& teacher_state,
                     const RegressorSpec& reg_spec, RegressorState<T>& reg,
                     const Dataset<T>& train_data, const RegressorTrainConfig<T>& cfg, MetricsLog& log) {
    for (const auto& [name, g] : teacher_state.groups)
        if (!g.frozen) throw ShapeError("train_regressor: teacher group " + name + " is not frozen");
    reg.check_matches(reg_spec);
    if (reg_spec.teacher_map != teacher_spec.generator_output())
        throw ShapeError("train_regressor: regressor teacher map " + reg_spec.teacher_map.str() +
                         " vs teacher generator output " + teacher_spec.generator_output().str());

    // Decide the classifier: the teacher's own C when shapes line up, else a
    // fresh auxiliary head (kept class-discriminative, then discarded).
    const bool use_teacher_classifier = reg_spec.student_map == teacher_spec.generator_output();
    const int64_t classes = teacher_spec.class_count();

    NetworkState<T> scratch;
    scratch.groups["reg"] = ParamGroup<T>{reg.weight, reg.bias, false};
    if (!use_teacher_classifier) {
        Rng aux_rng = Rng::stream(cfg.seed, RngStream::aux_head_init);
        Tensor<T> aux_w({reg_spec.student_map.numel(), classes});
        aux_rng.fill_normal(aux_w, std::sqrt(2.0 / static_cast<double>(reg_spec.student_map.numel())));
        scratch.groups["aux"] = ParamGroup<T>{std::move(aux_w), Tensor<T>({classes}), false};
    }

    OptimizerState<T> opt;
    opt.learning_rate = cfg.learning_rate;
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;

    Batcher batcher(train_data.size(), cfg.batch_size, Rng::stream(cfg.seed, RngStream::batcher));
    int64_t step = 0;
    const int64_t per_epoch = batcher.batches_per_epoch();
    while (step < cfg.steps) {
        for (const auto& idx : batcher.epoch()) {
            if (step >= cfg.steps) break;
            auto [batch, labels] = gather(train_data, idx);
            Tensor<T> m_t = forward_generator(teacher_spec, teacher_state, batch);

            Tape<T> tape;
            Var w = tape.leaf(scratch.groups.at("reg").weight, true);
            Var b = tape.leaf(scratch.groups.at("reg").bias, true);
            Var regressed = apply_regressor(tape, reg_spec, tape.constant(m_t), w, b);

            Var logits;
            Var aux_w{}, aux_b{};
            if (use_teacher_classifier) {
                auto binding = bind_state(tape, teacher_state, /*trainable=*/false);
                logits = forward_classifier(tape, teacher_spec, binding, regressed);
            } else {
                aux_w = tape.leaf(scratch.groups.at("aux").weight, true);
                aux_b = tape.leaf(scratch.groups.at("aux").bias, true);
                logits = ops::dense(tape, ops::flatten(tape, regressed), aux_w, aux_b);
            }

            auto loss = cross_entropy(tape, logits, labels);
            tape.backward(loss.var);

            GradMap<T> grads;
            grads["reg"] = {tape.grad(w), tape.grad(b)};
            if (!use_teacher_classifier) grads["aux"] = {tape.grad(aux_w), tape.grad(aux_b)};
            sgd_step(scratch, grads, opt);
            scratch.check_finite("regressor step");

            auto rec = MetricsRecord::train(Phase::pretrain, step, step / per_epoch);
            rec.ce = static_cast<double>(loss.item(tape));
            rec.total = rec.ce;
            log.append(rec);
            ++step;
        }
    }

    reg.weight = scratch.groups.at("reg").weight;
    reg.bias = scratch.groups.at("reg").bias;
    reg.trained = true;
}

}  // namespace ktan
