#pragma once

#include <optional>
#include <string>

#include "ktan/binio.hpp"
#include "ktan/metrics.hpp"
#include "ktan/optimizer.hpp"
#include "ktan/regressor.hpp"

namespace ktan {

inline constexpr char kCheckpointMagic[4] = {'K', 'T', 'C', 'K'};
inline constexpr uint32_t kCheckpointVersion = 1;

// Versioned container for whatever a pipeline stage produces: a network
// (spec + parameters + frozen flags), optionally its optimizer, and/or a
// trained teacher-to-student layer, plus the training cursor.
template <typename T>
struct Checkpoint {
    uint64_t config_hash = 0;
    Phase phase = Phase::pretrain;
    int64_t iteration = 0;
    std::optional<NetworkSpec> spec;
    std::optional<NetworkState<T>> state;
    std::optional<OptimizerState<T>> optimizer;
    std::optional<RegressorSpec> reg_spec;
    std::optional<RegressorState<T>> reg_state;
};

namespace detail {

inline void write_spec(binio::Writer& w, const NetworkSpec& spec) {
    w.str(spec.name);
    w.i64(spec.input.c);
    w.i64(spec.input.h);
    w.i64(spec.input.w);
    auto write_layers = [&](const std::vector<LayerDesc>& layers) {
        w.u64(layers.size());
        for (const auto& layer : layers) {
            if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
                w.u8(0);
                const auto& g = conv->geom;
                w.i64(g.in_channels);
                w.i64(g.out_channels);
                w.i64(g.kernel_h);
                w.i64(g.kernel_w);
                w.i64(g.stride_h);
                w.i64(g.stride_w);
                w.i64(g.pad_h);
                w.i64(g.pad_w);
                w.u8(conv->act == Activation::relu ? 1 : 0);
            } else if (const auto* pool = std::get_if<PoolLayer>(&layer)) {
                w.u8(1);
                w.i64(pool->geom.kernel);
                w.i64(pool->geom.stride);
            } else if (std::holds_alternative<FlattenLayer>(layer)) {
                w.u8(2);
            } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
                w.u8(3);
                w.i64(dense->in_features);
                w.i64(dense->out_features);
                w.u8(dense->act == Activation::relu ? 1 : 0);
            }
        }
    };
    write_layers(spec.generator_layers);
    write_layers(spec.classifier_layers);
}

inline NetworkSpec read_spec(binio::Reader& r) {
    NetworkSpec spec;
    spec.name = r.str();
    spec.input = {r.i64(), r.i64(), r.i64()};
    auto read_layers = [&]() {
        const uint64_t n = r.u64();
        std::vector<LayerDesc> layers;
        for (uint64_t i = 0; i < n; ++i) {
            switch (r.u8()) {
                case 0: {
                    ConvGeometry g;
                    g.in_channels = r.i64();
                    g.out_channels = r.i64();
                    g.kernel_h = r.i64();
                    g.kernel_w = r.i64();
                    g.stride_h = r.i64();
                    g.stride_w = r.i64();
                    g.pad_h = r.i64();
                    g.pad_w = r.i64();
                    layers.push_back(ConvLayer{g, r.u8() ? Activation::relu : Activation::none});
                    break;
                }
                case 1: {
                    PoolGeometry pg;
                    pg.kernel = r.i64();
                    pg.stride = r.i64();
                    layers.push_back(PoolLayer{pg});
                    break;
                }
                case 2: layers.push_back(FlattenLayer{}); break;
                case 3: {
                    DenseLayer d;
                    d.in_features = r.i64();
                    d.out_features = r.i64();
                    d.act = r.u8() ? Activation::relu : Activation::none;
                    layers.push_back(d);
                    break;
                }
                default: throw FormatError("checkpoint: unknown layer tag");
            }
        }
        return layers;
    };
    spec.generator_layers = read_layers();
    spec.classifier_layers = read_layers();
    return spec;
}

template <typename T>
void write_state(binio::Writer& w, const NetworkState<T>& state) {
    w.u64(state.groups.size());
    for (const auto& [name, g] : state.groups) {
        w.str(name);
        w.u8(g.frozen ? 1 : 0);
        w.tensor(g.weight);
        w.tensor(g.bias);
    }
}

template <typename T>
NetworkState<T> read_state(binio::Reader& r) {
    NetworkState<T> state;
    const uint64_t n = r.u64();
    for (uint64_t i = 0; i < n; ++i) {
        const std::string name = r.str();
        ParamGroup<T> g;
        g.frozen = r.u8() != 0;
        g.weight = r.template tensor<T>();
        g.bias = r.template tensor<T>();
        state.groups[name] = std::move(g);
    }
    return state;
}

}  // namespace detail

template <typename T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path) {
    binio::Writer w(path);
    w.magic(kCheckpointMagic);
    w.u32(kCheckpointVersion);
    w.u8(binio::precision_code<T>());
    w.u64(ck.config_hash);
    w.u32(static_cast<uint32_t>(ck.phase));
    w.i64(ck.iteration);

    w.u8(ck.spec.has_value() ? 1 : 0);
    if (ck.spec) detail::write_spec(w, *ck.spec);
    w.u8(ck.state.has_value() ? 1 : 0);
    if (ck.state) detail::write_state(w, *ck.state);

    w.u8(ck.optimizer.has_value() ? 1 : 0);
    if (ck.optimizer) {
        w.scalar<T>(ck.optimizer->learning_rate);
        w.scalar<T>(ck.optimizer->momentum);
        w.scalar<T>(ck.optimizer->weight_decay);
        w.u64(ck.optimizer->velocity.size());
        for (const auto& [name, v] : ck.optimizer->velocity) {
            w.str(name);
            w.tensor(v.first);
            w.tensor(v.second);
        }
    }

    w.u8(ck.reg_spec.has_value() ? 1 : 0);
    if (ck.reg_spec) {
        const auto& rs = *ck.reg_spec;
        for (int64_t v : {rs.teacher_map.c, rs.teacher_map.h, rs.teacher_map.w, rs.student_map.c,
                          rs.student_map.h, rs.student_map.w, rs.stride_h, rs.stride_w, rs.pad_h,
                          rs.pad_w, rs.kernel_h, rs.kernel_w})
            w.i64(v);
    }
    w.u8(ck.reg_state.has_value() ? 1 : 0);
    if (ck.reg_state) {
        w.u8(ck.reg_state->trained ? 1 : 0);
        w.tensor(ck.reg_state->weight);
        w.tensor(ck.reg_state->bias);
    }
    w.close();
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
    binio::Reader r(path);
    r.expect_magic(kCheckpointMagic, "checkpoint");
    const uint32_t version = r.u32();
    if (version != kCheckpointVersion)
        throw FormatError(path + ": checkpoint version " + std::to_string(version) + ", expected " +
                          std::to_string(kCheckpointVersion));
    const uint8_t prec = r.u8();
    if (prec != binio::precision_code<T>())
        throw FormatError(path + ": checkpoint precision code " + std::to_string(prec) + ", expected " +
                          std::to_string(binio::precision_code<T>()));

    Checkpoint<T> ck;
    ck.config_hash = r.u64();
    const uint32_t phase = r.u32();
    if (phase > 2) throw FormatError(path + ": bad phase tag");
    ck.phase = static_cast<Phase>(phase);
    ck.iteration = r.i64();

    if (r.u8()) ck.spec = detail::read_spec(r);
    if (r.u8()) ck.state = detail::read_state<T>(r);
    if (r.u8()) {
        OptimizerState<T> opt;
        opt.learning_rate = r.template scalar<T>();
        opt.momentum = r.template scalar<T>();
        opt.weight_decay = r.template scalar<T>();
        const uint64_t n = r.u64();
        for (uint64_t i = 0; i < n; ++i) {
            const std::string name = r.str();
            auto w = r.template tensor<T>();
            auto b = r.template tensor<T>();
            opt.velocity[name] = {std::move(w), std::move(b)};
        }
        ck.optimizer = std::move(opt);
    }
    if (r.u8()) {
        RegressorSpec rs;
        rs.teacher_map = {r.i64(), r.i64(), r.i64()};
        rs.student_map = {r.i64(), r.i64(), r.i64()};
        rs.stride_h = r.i64();
        rs.stride_w = r.i64();
        rs.pad_h = r.i64();
        rs.pad_w = r.i64();
        rs.kernel_h = r.i64();
        rs.kernel_w = r.i64();
        rs.check_invariant();
        ck.reg_spec = rs;
    }
    if (r.u8()) {
        RegressorState<T> st;
        st.trained = r.u8() != 0;
        st.weight = r.template tensor<T>();
        st.bias = r.template tensor<T>();
        ck.reg_state = std::move(st);
    }
    r.expect_end();
    return ck;
}

}  // namespace ktan
