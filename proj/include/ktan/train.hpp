#pragma once

#include <functional>
#include <optional>
#include <string>

#include "ktan/checkpoint.hpp"
#include "ktan/config.hpp"
#include "ktan/dataset.hpp"
#include "ktan/losses.hpp"
#include "ktan/metrics.hpp"
#include "ktan/optimizer.hpp"
#include "ktan/regressor.hpp"

namespace ktan {

// ---- architectures -------------------------------------------------------

// Desk-scale teacher: four conv blocks, 16-32-32-64 channels. The feature map
// is the conv4 output; for 16x16 inputs that is (64, 4, 4).
inline NetworkSpec desk_teacher_spec(Shape3 input, int64_t classes) {
    NetworkSpec spec;
    spec.name = "desk_teacher";
    spec.input = input;
    spec.generator_layers = {
        ConvLayer{ConvGeometry{input.c, 16, 3, 3, 1, 1, 1, 1}, Activation::relu},
        PoolLayer{PoolGeometry{2, 2}},
        ConvLayer{ConvGeometry{16, 32, 3, 3, 1, 1, 1, 1}, Activation::relu},
        PoolLayer{PoolGeometry{2, 2}},
        ConvLayer{ConvGeometry{32, 32, 3, 3, 1, 1, 1, 1}, Activation::relu},
        ConvLayer{ConvGeometry{32, 64, 3, 3, 1, 1, 1, 1}, Activation::relu},
    };
    const Shape3 fm = spec.generator_output();
    spec.classifier_layers = {
        FlattenLayer{},
        DenseLayer{fm.numel(), 96, Activation::relu},
        DenseLayer{96, classes, Activation::none},
    };
    return spec;
}

// Desk-scale student: two conv blocks, 8-16 channels. The second conv runs
// unpadded so the student map is spatially smaller than the teacher's and the
// regressor has to solve a K > 1 kernel; for 16x16 inputs the map is
// (16, 3, 3) against the teacher's (64, 4, 4), giving K = 2.
inline NetworkSpec desk_student_spec(Shape3 input, int64_t classes) {
    NetworkSpec spec;
    spec.name = "desk_student";
    spec.input = input;
    spec.generator_layers = {
        ConvLayer{ConvGeometry{input.c, 8, 3, 3, 1, 1, 1, 1}, Activation::relu},
        PoolLayer{PoolGeometry{2, 2}},
        ConvLayer{ConvGeometry{8, 16, 3, 3, 1, 1, 0, 0}, Activation::relu},
        PoolLayer{PoolGeometry{2, 2}},
    };
    const Shape3 fm = spec.generator_output();
    spec.classifier_layers = {
        FlattenLayer{},
        DenseLayer{fm.numel(), 48, Activation::relu},
        DenseLayer{48, classes, Activation::none},
    };
    return spec;
}

// Small variants for 8x8 test datasets.
inline NetworkSpec tiny_teacher_spec(Shape3 input, int64_t classes) {
    NetworkSpec spec;
    spec.name = "tiny_teacher";
    spec.input = input;
    spec.generator_layers = {
        ConvLayer{ConvGeometry{input.c, 8, 3, 3, 1, 1, 1, 1}, Activation::relu},
        PoolLayer{PoolGeometry{2, 2}},
        ConvLayer{ConvGeometry{8, 16, 3, 3, 1, 1, 1, 1}, Activation::relu},
    };
    const Shape3 fm = spec.generator_output();
    spec.classifier_layers = {
        FlattenLayer{},
        DenseLayer{fm.numel(), 24, Activation::relu},
        DenseLayer{24, classes, Activation::none},
    };
    return spec;
}

inline NetworkSpec tiny_student_spec(Shape3 input, int64_t classes) {
    NetworkSpec spec;
    spec.name = "tiny_student";
    spec.input = input;
    spec.generator_layers = {
        ConvLayer{ConvGeometry{input.c, 4, 3, 3, 1, 1, 1, 1}, Activation::relu},
        PoolLayer{PoolGeometry{2, 2}},
        ConvLayer{ConvGeometry{4, 8, 3, 3, 1, 1, 0, 0}, Activation::relu},
    };
    const Shape3 fm = spec.generator_output();
    spec.classifier_layers = {
        FlattenLayer{},
        DenseLayer{fm.numel(), 16, Activation::relu},
        DenseLayer{16, classes, Activation::none},
    };
    return spec;
}

inline NetworkSpec arch_from_name(const std::string& name, Shape3 input, int64_t classes) {
    if (name == "desk_teacher") return desk_teacher_spec(input, classes);
    if (name == "desk_student") return desk_student_spec(input, classes);
    if (name == "tiny_teacher") return tiny_teacher_spec(input, classes);
    if (name == "tiny_student") return tiny_student_spec(input, classes);
    throw ConfigError("unknown architecture preset '" + name + "'");
}

// Shallow VGG-like discriminator: one conv + ReLU + 2x2 max-pool + flatten +
// one dense unit; the sigmoid is applied where its output is consumed.
inline NetworkSpec discriminator_spec(Shape3 feature_map, int64_t hidden_channels) {
    NetworkSpec spec;
    spec.name = "discriminator";
    spec.input = feature_map;
    spec.generator_layers = {
        ConvLayer{ConvGeometry{feature_map.c, hidden_channels, 3, 3, 1, 1, 1, 1}, Activation::relu},
        PoolLayer{PoolGeometry{2, 2}},
    };
    const Shape3 fm = spec.generator_output();
    spec.classifier_layers = {FlattenLayer{}, DenseLayer{fm.numel(), 1, Activation::none}};
    return spec;
}

// ---- evaluation ----------------------------------------------------------

// Fraction of argmax-correct predictions; ties go to the lowest class index.
template <typename T>
double evaluate(const NetworkSpec& spec, const NetworkState<T>& state, const Dataset<T>& ds,
                int64_t batch_size = 64) {
    if (ds.images.empty()) throw ShapeError("evaluate: empty split");
    int64_t correct = 0;
    for (int64_t start = 0; start < ds.size(); start += batch_size) {
        const int64_t end = std::min(ds.size(), start + batch_size);
        std::vector<int64_t> idx(static_cast<size_t>(end - start));
        for (int64_t i = start; i < end; ++i) idx[static_cast<size_t>(i - start)] = i;
        auto [batch, labels] = gather(ds, idx);
        Tensor<T> logits = forward_network(spec, state, batch);
        const int64_t K = logits.extent(1);
        for (int64_t n = 0; n < logits.extent(0); ++n) {
            int64_t best = 0;
            for (int64_t k = 1; k < K; ++k)
                if (logits.at2(n, k) > logits.at2(n, best)) best = k;
            if (best == labels[static_cast<size_t>(n)]) ++correct;
        }
    }
    return static_cast<double>(correct) / static_cast<double>(ds.size());
}

// ---- experiment runner ----------------------------------------------------

template <typename T>
struct TeacherArtifacts {
    NetworkSpec spec;
    NetworkState<T> state;
    std::optional<RegressorSpec> reg_spec;
    std::optional<RegressorState<T>> reg_state;
};

struct RunSummary {
    std::string method;
    double final_test_accuracy = 0;
    double final_train_accuracy = -1;
    double best_test_accuracy = 0;
    int64_t best_epoch = -1;
    int64_t total_iterations = 0;

    std::string text() const {
        std::ostringstream os;
        os << "method=" << method << '\n'
           << "final_test_accuracy=" << fmt_double(final_test_accuracy) << '\n';
        if (final_train_accuracy >= 0)
            os << "final_train_accuracy=" << fmt_double(final_train_accuracy) << '\n';
        os << "best_test_accuracy=" << fmt_double(best_test_accuracy) << '\n'
           << "best_epoch=" << best_epoch << '\n'
           << "total_iterations=" << total_iterations << '\n';
        return os.str();
    }
};

template <typename T>
struct RunResult {
    NetworkSpec model_spec;
    NetworkState<T> model_state;
    RunSummary summary;
    Phase final_phase = Phase::pretrain;
};

// Called after each Algorithm 2 sub-update; lets tests assert that every
// sub-update touches exactly its declared parameter set.
using StepObserver = std::function<void(const std::string& stage)>;

// One experiment on one thread: owns the trained model, the batch/augment
// streams shared by every phase, and the metrics log.
template <typename T>
class ExperimentRunner {
public:
    ExperimentRunner(const ExperimentConfig& cfg, const Dataset<T>& train, const Dataset<T>& test,
                     std::optional<TeacherArtifacts<T>> teacher, MetricsLog& log,
                     StepObserver observer = nullptr)
        : cfg_(cfg),
          train_(train),
          test_(test),
          teacher_(std::move(teacher)),
          log_(log),
          observer_(std::move(observer)),
          batcher_(train.size(), cfg.batch_size, Rng::stream(cfg.seed, RngStream::batcher)),
          augment_rng_(Rng::stream(cfg.seed, RngStream::augment)) {
        steps_per_epoch_ = batcher_.batches_per_epoch();

        const bool needs_teacher = cfg.method != Method::teacher && cfg.method != Method::student;
        const bool needs_regressor =
            cfg.method == Method::dln || cfg.method == Method::ktan || cfg.method == Method::ktan_kd;
        if (needs_teacher && !teacher_)
            throw ConfigError(std::string("method ") + method_name(cfg.method) +
                              " requires a teacher checkpoint");
        if (teacher_) {
            for (const auto& [name, g] : teacher_->state.groups)
                if (!g.frozen) throw ConfigError("teacher parameters must be frozen, group " + name);
        }
        if (needs_regressor) {
            if (!teacher_->reg_spec || !teacher_->reg_state || !teacher_->reg_state->trained)
                throw ConfigError(std::string("method ") + method_name(cfg.method) +
                                  " requires a trained teacher-to-student layer checkpoint");
            teacher_->reg_state->check_matches(*teacher_->reg_spec);
        }

        // the trained model: the teacher net for method=teacher, else the student
        const int64_t classes = train.class_count;
        const Shape3 input{train.images.extent(1), train.images.extent(2), train.images.extent(3)};
        if (cfg.method == Method::teacher) {
            model_spec_ = arch_from_name(cfg.teacher_arch, input, classes);
            Rng init = Rng::stream(cfg.seed, RngStream::teacher_init);
            model_state_ = init_network<T>(model_spec_, init);
        } else {
            model_spec_ = arch_from_name(cfg.student_arch, input, classes);
            Rng init = Rng::stream(cfg.seed, RngStream::student_init);
            model_state_ = init_network<T>(model_spec_, init);
        }
        if (needs_regressor && teacher_->reg_spec->student_map != model_spec_.generator_output())
            throw ShapeError("regressor student map " + teacher_->reg_spec->student_map.str() +
                             " does not match student feature map " +
                             model_spec_.generator_output().str());

        opt_.learning_rate = static_cast<T>(cfg.lr);
        opt_.momentum = static_cast<T>(cfg.momentum);
        opt_.weight_decay = static_cast<T>(cfg.weight_decay);
    }

    RunResult<T> run() {
        const int64_t epoch_steps = steps_per_epoch_;
        switch (cfg_.method) {
            case Method::teacher:
            case Method::student:
                supervised_phase(/*use_kd=*/false, /*mse_weight=*/0, cfg_.epochs * epoch_steps);
                break;
            case Method::kd:
                supervised_phase(/*use_kd=*/true, /*mse_weight=*/0, cfg_.epochs * epoch_steps);
                break;
            case Method::dln:
                supervised_phase(/*use_kd=*/false, dln_mse_weight(), cfg_.epochs * epoch_steps);
                break;
            case Method::ktan:
            case Method::ktan_kd: {
                const bool kd = cfg_.method == Method::ktan_kd;
                const int64_t k = cfg_.k_pretrain_steps >= 0 ? cfg_.k_pretrain_steps : epoch_steps;
                const int64_t adv =
                    cfg_.adversarial_iterations >= 0 ? cfg_.adversarial_iterations : epoch_steps;
                supervised_phase(kd, cfg_.beta, k);
                adversarial_phase(kd, adv);
                break;
            }
        }

        // every run ends on an evaluation record
        if (!eval_is_current_) evaluate_now();

        RunResult<T> result;
        result.model_spec = model_spec_;
        result.model_state = model_state_;
        result.summary = summary_;
        result.summary.method = method_name(cfg_.method);
        result.summary.total_iterations = iteration_;
        result.final_phase = phase_;
        return result;
    }

    const NetworkSpec& discriminator() const { return disc_spec_; }
    const NetworkState<T>& discriminator_state() const { return disc_state_; }
    const NetworkSpec& model_spec() const { return model_spec_; }
    const NetworkState<T>& model_state() const { return model_state_; }

private:
    double dln_mse_weight() const { return cfg_.fitnet ? cfg_.fitnet_weight : cfg_.beta; }

    std::vector<int64_t> next_batch(bool& epoch_done) {
        if (pos_ >= pending_.size()) {
            pending_ = batcher_.epoch();
            pos_ = 0;
        }
        auto idx = pending_[pos_++];
        epoch_done = pos_ >= pending_.size();
        return idx;
    }

    std::pair<Tensor<T>, std::vector<int64_t>> prepare_batch(const std::vector<int64_t>& idx) {
        auto [batch, labels] = gather(train_, idx);
        if (cfg_.augment.enabled) batch = augment_batch(batch, cfg_.augment, augment_rng_);
        return {std::move(batch), std::move(labels)};
    }

    void evaluate_now() {
        const double test_acc = evaluate(model_spec_, model_state_, test_);
        log_.append(MetricsRecord::evaluation(iteration_, epoch_, "test", test_acc));
        if (cfg_.eval_train) {
            summary_.final_train_accuracy = evaluate(model_spec_, model_state_, train_);
            log_.append(MetricsRecord::evaluation(iteration_, epoch_, "train",
                                                  summary_.final_train_accuracy));
        }
        summary_.final_test_accuracy = test_acc;
        if (test_acc > summary_.best_test_accuracy) {
            summary_.best_test_accuracy = test_acc;
            summary_.best_epoch = epoch_;
        }
        eval_is_current_ = true;
    }

    void end_of_epoch() {
        evaluate_now();
        ++epoch_;
        for (int64_t d : cfg_.decay_epochs)
            if (d == epoch_) opt_.learning_rate *= static_cast<T>(cfg_.decay_factor);
    }

    // Joint update of the model's generator and classifier by
    // (kd | ce) + mse_weight * L_MSE(R(m_t), m_s). Methods student, kd, dln
    // and the ktan pretraining stage are all this loop; zero-weight terms are
    // skipped outright so the reductions are bit-exact.
    void supervised_phase(bool use_kd, double mse_weight, int64_t steps) {
        phase_ = Phase::pretrain;
        const bool needs_teacher_fm = mse_weight != 0;
        for (int64_t s = 0; s < steps; ++s) {
            bool epoch_done = false;
            auto idx = next_batch(epoch_done);
            auto [batch, labels] = prepare_batch(idx);

            Tensor<T> regressed, teacher_logits;
            if (needs_teacher_fm) {
                Tensor<T> m_t = forward_generator(teacher_->spec, teacher_->state, batch);
                regressed = apply_regressor(*teacher_->reg_spec, *teacher_->reg_state, m_t);
                if (use_kd)
                    teacher_logits = forward_classifier(teacher_->spec, teacher_->state, m_t);
            } else if (use_kd) {
                teacher_logits = forward_network(teacher_->spec, teacher_->state, batch);
            }

            Tape<T> tape;
            auto binding = bind_state(tape, model_state_, /*trainable=*/true);
            Var fm = forward_generator(tape, model_spec_, binding, tape.constant(batch));
            Var logits = forward_classifier(tape, model_spec_, binding, fm);

            LossValue<T> base = use_kd
                                    ? kd_loss(tape, logits, teacher_logits, static_cast<T>(cfg_.temperature),
                                              static_cast<T>(cfg_.kd_weight), labels, cfg_.kd_t_squared)
                                    : cross_entropy(tape, logits, labels);
            Var total = base.var;
            LossValue<T> mse{};
            if (mse_weight != 0) {
                mse = mse_feature_loss(tape, regressed, fm);
                total = ops::add(tape, total, ops::scale(tape, mse.var, static_cast<T>(mse_weight)));
            }

            tape.backward(total);
            sgd_step(model_state_, collect_grads(tape, binding), opt_);
            model_state_.check_finite("model parameters after step");

            auto rec = MetricsRecord::train(phase_, iteration_, epoch_);
            if (use_kd)
                rec.kd = static_cast<double>(base.item(tape));
            else
                rec.ce = static_cast<double>(base.item(tape));
            if (mse_weight != 0) rec.mse_fm = mse_weight * static_cast<double>(mse.item(tape));
            rec.total = static_cast<double>(tape.value(total).item());
            log_.append(rec);
            ++iteration_;
            eval_is_current_ = false;

            if (epoch_done) end_of_epoch();
        }
    }

    void adversarial_phase(bool use_kd, int64_t iterations) {
        if (iterations <= 0) return;
        phase_ = Phase::adversarial;

        // fresh discriminator plus phase-local optimizers at the adversarial rate
        disc_spec_ = discriminator_spec(model_spec_.generator_output(), cfg_.disc_channels);
        Rng disc_init = Rng::stream(cfg_.seed, RngStream::discriminator_init);
        disc_state_ = init_network<T>(disc_spec_, disc_init);

        OptimizerState<T> model_opt;
        model_opt.learning_rate = static_cast<T>(cfg_.lr_adversarial);
        model_opt.momentum = static_cast<T>(cfg_.momentum);
        model_opt.weight_decay = static_cast<T>(cfg_.weight_decay);
        OptimizerState<T> disc_opt = model_opt;

        for (int64_t s = 0; s < iterations; ++s) {
            bool epoch_done = false;
            auto idx = next_batch(epoch_done);
            auto [batch, labels] = prepare_batch(idx);
            adversarial_step(use_kd, batch, labels, model_opt, disc_opt);
            ++iteration_;
            eval_is_current_ = false;
            if (epoch_done) end_of_epoch();
        }
    }

    Var discriminator_probs(Tape<T>& tape, const Binding<T>& dbind, Var maps) {
        Var h = forward_generator(tape, disc_spec_, dbind, maps);
        return ops::sigmoid(tape, forward_classifier(tape, disc_spec_, dbind, h));
    }

    // One Algorithm 2 iteration: the same augmented batch feeds the teacher
    // and student sides, then three sub-updates run in order, each on a fresh
    // forward pass: (1) D by L_D, (2) the student generator by
    // ce + alpha*adv + beta*mse, (3) the classifier by ce alone.
    void adversarial_step(bool use_kd, const Tensor<T>& batch, const std::vector<int64_t>& labels,
                          OptimizerState<T>& model_opt, OptimizerState<T>& disc_opt) {
        Tensor<T> m_t = forward_generator(teacher_->spec, teacher_->state, batch);
        Tensor<T> regressed = apply_regressor(*teacher_->reg_spec, *teacher_->reg_state, m_t);
        Tensor<T> teacher_logits;
        if (use_kd) teacher_logits = forward_classifier(teacher_->spec, teacher_->state, m_t);

        auto rec = MetricsRecord::train(phase_, iteration_, epoch_);

        // (1) discriminator update; both map batches detached from their producers
        for (int64_t d = 0; d < cfg_.d_steps; ++d) {
            Tensor<T> m_s = forward_generator(model_spec_, model_state_, batch);
            Tape<T> tape;
            auto dbind = bind_state(tape, disc_state_, /*trainable=*/true);
            Var d_teacher = discriminator_probs(tape, dbind, tape.constant(regressed));
            Var d_student = discriminator_probs(tape, dbind, tape.constant(m_s));
            auto loss_d = discriminator_loss(tape, d_teacher, d_student);
            rec.adv_d = static_cast<double>(loss_d.item(tape));
            rec.d_teacher = mean_of(tape.value(d_teacher));
            rec.d_student = mean_of(tape.value(d_student));
            tape.backward(loss_d.var);
            sgd_step(disc_state_, collect_grads(tape, dbind), disc_opt);
            disc_state_.check_finite("discriminator parameters after step");
        }
        if (observer_) observer_("discriminator");

        // (2) student generator update; gradients flow through the fixed
        // classifier and discriminator weights but touch only gen.* groups
        {
            Tape<T> tape;
            auto sbind = bind_state_filtered(tape, model_state_,
                                             [](const std::string& n) { return n.starts_with("gen"); });
            Var fm = forward_generator(tape, model_spec_, sbind, tape.constant(batch));
            Var logits = forward_classifier(tape, model_spec_, sbind, fm);
            LossValue<T> base =
                use_kd ? kd_loss(tape, logits, teacher_logits, static_cast<T>(cfg_.temperature),
                                 static_cast<T>(cfg_.kd_weight), labels, cfg_.kd_t_squared)
                       : cross_entropy(tape, logits, labels);
            Var total = base.var;
            if (cfg_.alpha != 0) {
                auto dbind = bind_state(tape, disc_state_, /*trainable=*/false);
                auto adv = generator_adversarial_loss(tape, discriminator_probs(tape, dbind, fm));
                total = ops::add(tape, total, ops::scale(tape, adv.var, static_cast<T>(cfg_.alpha)));
                rec.adv_g = cfg_.alpha * static_cast<double>(adv.item(tape));
            }
            if (cfg_.beta != 0) {
                auto mse = mse_feature_loss(tape, regressed, fm);
                total = ops::add(tape, total, ops::scale(tape, mse.var, static_cast<T>(cfg_.beta)));
                rec.mse_fm = cfg_.beta * static_cast<double>(mse.item(tape));
            }
            if (use_kd)
                rec.kd = static_cast<double>(base.item(tape));
            else
                rec.ce = static_cast<double>(base.item(tape));
            rec.total = static_cast<double>(tape.value(total).item());

            tape.backward(total);
            sgd_step(model_state_, collect_grads(tape, sbind), model_opt);
            model_state_.check_finite("student generator after step");
        }
        if (observer_) observer_("generator");

        // (3) classifier update on a fresh forward
        {
            Tensor<T> m_s = forward_generator(model_spec_, model_state_, batch);
            Tape<T> tape;
            auto cbind = bind_state_filtered(tape, model_state_,
                                             [](const std::string& n) { return n.starts_with("cls"); });
            Var logits = forward_classifier(tape, model_spec_, cbind, tape.constant(m_s));
            LossValue<T> base =
                use_kd ? kd_loss(tape, logits, teacher_logits, static_cast<T>(cfg_.temperature),
                                 static_cast<T>(cfg_.kd_weight), labels, cfg_.kd_t_squared)
                       : cross_entropy(tape, logits, labels);
            tape.backward(base.var);
            sgd_step(model_state_, collect_grads(tape, cbind), model_opt);
            model_state_.check_finite("student classifier after step");
        }
        if (observer_) observer_("classifier");

        log_.append(rec);
    }

    static double mean_of(const Tensor<T>& t) {
        double s = 0;
        for (int64_t i = 0; i < t.numel(); ++i) s += static_cast<double>(t[i]);
        return s / static_cast<double>(t.numel());
    }

    ExperimentConfig cfg_;
    const Dataset<T>& train_;
    const Dataset<T>& test_;
    std::optional<TeacherArtifacts<T>> teacher_;
    MetricsLog& log_;
    StepObserver observer_;

    NetworkSpec model_spec_;
    NetworkState<T> model_state_;
    OptimizerState<T> opt_;
    NetworkSpec disc_spec_;
    NetworkState<T> disc_state_;

    Batcher batcher_;
    Rng augment_rng_;
    std::vector<std::vector<int64_t>> pending_;
    size_t pos_ = 0;
    int64_t steps_per_epoch_ = 0;
    int64_t iteration_ = 0;
    int64_t epoch_ = 0;
    Phase phase_ = Phase::pretrain;
    bool eval_is_current_ = false;
    RunSummary summary_;
};

template <typename T>
RunResult<T> run_experiment(const ExperimentConfig& cfg, const Dataset<T>& train, const Dataset<T>& test,
                            std::optional<TeacherArtifacts<T>> teacher, MetricsLog& log,
                            StepObserver observer = nullptr) {
    ExperimentRunner<T> runner(cfg, train, test, std::move(teacher), log, std::move(observer));
    return runner.run();
}

}  // namespace ktan
