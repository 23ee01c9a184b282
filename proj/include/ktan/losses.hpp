#pragma once

#include <string>
#include <vector>

#include "ktan/autodiff.hpp"

namespace ktan {

enum class LossTag { ce, kd, mse_fm, adv_g, adv_d, total };

inline const char* loss_tag_name(LossTag t) {
    switch (t) {
        case LossTag::ce: return "ce";
        case LossTag::kd: return "kd";
        case LossTag::mse_fm: return "mse_fm";
        case LossTag::adv_g: return "adv_g";
        case LossTag::adv_d: return "adv_d";
        case LossTag::total: return "total";
    }
    return "?";
}

// A differentiable scalar on the tape plus its component tag.
template <typename T>
struct LossValue {
    Var var;
    LossTag tag;

    static LossValue checked(Tape<T>& tape, Var v, LossTag tag) {
        const T x = tape.value(v).item();
        if (!std::isfinite(x)) throw NanError(std::string("loss ") + loss_tag_name(tag));
        return LossValue{v, tag};
    }

    T item(const Tape<T>& tape) const { return tape.value(var).item(); }
};

// Probability clamp keeping logs finite; early discriminators saturate.
template <typename T>
inline constexpr T kProbEps = T(1e-7);

namespace detail {

template <typename T>
void validate_labels(const Tensor<T>& logits, const std::vector<int64_t>& labels) {
    if (logits.rank() != 2) throw ShapeError("cross_entropy: logits must be [N,K]");
    if (static_cast<int64_t>(labels.size()) != logits.extent(0))
        throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.extent(0)) + " rows");
    for (int64_t y : labels)
        if (y < 0 || y >= logits.extent(1))
            throw ShapeError("cross_entropy: label " + std::to_string(y) + " out of range [0," +
                             std::to_string(logits.extent(1)) + ")");
}

template <typename T>
void validate_probabilities(const Tensor<T>& p, const char* what) {
    if (p.rank() != 2 || p.extent(1) != 1)
        throw ShapeError(std::string(what) + ": expected probabilities [N,1], got " + shape_str(p.shape()));
    for (int64_t i = 0; i < p.numel(); ++i)
        if (!(p[i] >= T(0) && p[i] <= T(1)))
            throw ShapeError(std::string(what) + ": probability outside [0,1]");
}

}  // namespace detail

// Mean over the batch of -log_softmax(logits)[label].
template <typename T>
LossValue<T> cross_entropy(Tape<T>& tape, Var logits, const std::vector<int64_t>& labels) {
    detail::validate_labels(tape.value(logits), labels);
    Var lsm = ops::log_softmax(tape, logits);
    Var picked = ops::pick(tape, lsm, labels);
    Var loss = ops::scale(tape, ops::mean_all(tape, picked), T(-1));
    return LossValue<T>::checked(tape, loss, LossTag::ce);
}

// w * T^2 * soft-target cross-entropy at temperature T plus (1-w) * hard CE.
// Teacher logits enter as a detached constant; only the student side is
// differentiable. The T^2 factor keeps the KD gradient scale
// temperature-invariant and can be disabled.
template <typename T>
LossValue<T> kd_loss(Tape<T>& tape, Var student_logits, const Tensor<T>& teacher_logits, T temperature,
                     T teacher_weight, const std::vector<int64_t>& labels, bool t_squared = true) {
    if (temperature <= T(0)) throw ShapeError("kd_loss: temperature must be positive");
    if (teacher_weight < T(0) || teacher_weight > T(1))
        throw ShapeError("kd_loss: teacher weight must be in [0,1]");
    const Tensor<T>& sv = tape.value(student_logits);
    check_same_shape(sv, teacher_logits, "kd_loss");
    detail::validate_labels(sv, labels);

    const int64_t N = sv.extent(0);
    Tensor<T> scaled_teacher(teacher_logits.shape());
    for (int64_t i = 0; i < teacher_logits.numel(); ++i) scaled_teacher[i] = teacher_logits[i] / temperature;
    Var teacher_probs = tape.constant(kernels::softmax_forward(scaled_teacher));

    Var student_soft = ops::log_softmax(tape, ops::scale(tape, student_logits, T(1) / temperature));
    Var cross = ops::mul(tape, teacher_probs, student_soft);
    Var soft_ce = ops::scale(tape, ops::sum_all(tape, cross), T(-1) / static_cast<T>(N));

    LossValue<T> hard = cross_entropy(tape, student_logits, labels);
    const T soft_weight = teacher_weight * (t_squared ? temperature * temperature : T(1));
    Var loss = ops::add(tape, ops::scale(tape, soft_ce, soft_weight),
                        ops::scale(tape, hard.var, T(1) - teacher_weight));
    return LossValue<T>::checked(tape, loss, LossTag::kd);
}

// Mean squared difference over all N*c*h*w elements; the teacher map is a
// detached constant, so gradients reach the student map only. Equal shapes are
// required: the regressor exists to force the scale ratio to 1.
template <typename T>
LossValue<T> mse_feature_loss(Tape<T>& tape, const Tensor<T>& teacher_map, Var student_map) {
    const Tensor<T>& sv = tape.value(student_map);
    if (!sv.same_shape(teacher_map))
        throw ShapeError("mse_feature_loss: teacher map " + shape_str(teacher_map.shape()) +
                         " vs student map " + shape_str(sv.shape()) + " (regressor mis-sized?)");
    Var diff = ops::sub(tape, student_map, tape.constant(teacher_map));
    Var loss = ops::mean_all(tape, ops::mul(tape, diff, diff));
    return LossValue<T>::checked(tape, loss, LossTag::mse_fm);
}

// Mean of -log D(teacher) - log(1 - D(student)); teacher label 1, student 0.
template <typename T>
LossValue<T> discriminator_loss(Tape<T>& tape, Var d_teacher, Var d_student) {
    detail::validate_probabilities(tape.value(d_teacher), "discriminator_loss");
    detail::validate_probabilities(tape.value(d_student), "discriminator_loss");
    check_same_shape(tape.value(d_teacher), tape.value(d_student), "discriminator_loss");
    const T eps = kProbEps<T>;
    Var ct = ops::clamp(tape, d_teacher, eps, T(1) - eps);
    Var cs = ops::clamp(tape, d_student, eps, T(1) - eps);
    Var ones = tape.constant(Tensor<T>::ones(tape.value(d_student).shape()));
    Var term = ops::sub(tape, ops::scale(tape, ops::log(tape, ct), T(-1)),
                        ops::log(tape, ops::sub(tape, ones, cs)));
    Var loss = ops::mean_all(tape, term);
    return LossValue<T>::checked(tape, loss, LossTag::adv_d);
}

// Non-saturating generator objective: mean of -log D(student).
template <typename T>
LossValue<T> generator_adversarial_loss(Tape<T>& tape, Var d_student) {
    detail::validate_probabilities(tape.value(d_student), "generator_adversarial_loss");
    const T eps = kProbEps<T>;
    Var cs = ops::clamp(tape, d_student, eps, T(1) - eps);
    Var loss = ops::scale(tape, ops::mean_all(tape, ops::log(tape, cs)), T(-1));
    return LossValue<T>::checked(tape, loss, LossTag::adv_g);
}

// ce + alpha * adv_g + beta * mse_fm. Zero-weight terms are not composed at
// all, so the alpha = beta = 0 case reduces bit-exactly to the ce term.
template <typename T>
LossValue<T> student_total_loss(Tape<T>& tape, const LossValue<T>& ce, const LossValue<T>& adv_g,
                                const LossValue<T>& mse_fm, T alpha, T beta) {
    if (alpha < T(0) || beta < T(0)) throw ShapeError("student_total_loss: weights must be >= 0");
    Var total = ce.var;
    if (alpha != T(0)) total = ops::add(tape, total, ops::scale(tape, adv_g.var, alpha));
    if (beta != T(0)) total = ops::add(tape, total, ops::scale(tape, mse_fm.var, beta));
    return LossValue<T>::checked(tape, total, LossTag::total);
}

}  // namespace ktan
