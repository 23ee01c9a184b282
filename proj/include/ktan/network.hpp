#pragma once

#include <map>
#include <string>
#include <variant>
#include <vector>

#include "ktan/autodiff.hpp"
#include "ktan/rng.hpp"

namespace ktan {

enum class Activation { none, relu };

struct ConvLayer {
    ConvGeometry geom;
    Activation act = Activation::relu;
};
struct PoolLayer {
    PoolGeometry geom;
};
struct FlattenLayer {};
struct DenseLayer {
    int64_t in_features = 0;
    int64_t out_features = 0;
    Activation act = Activation::none;
};

using LayerDesc = std::variant<ConvLayer, PoolLayer, FlattenLayer, DenseLayer>;

struct Shape3 {
    int64_t c = 0, h = 0, w = 0;
    int64_t numel() const { return c * h * w; }
    bool operator==(const Shape3&) const = default;
    std::string str() const {
        return "(" + std::to_string(c) + "," + std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

// Layer list split into a convolutional generator part, whose final output is
// the network's feature map, and a flatten+dense classifier part.
struct NetworkSpec {
    std::string name;
    Shape3 input;
    std::vector<LayerDesc> generator_layers;
    std::vector<LayerDesc> classifier_layers;

    Shape3 generator_output() const {
        Shape3 s = input;
        for (size_t i = 0; i < generator_layers.size(); ++i) {
            const auto& layer = generator_layers[i];
            if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
                if (conv->geom.in_channels != s.c)
                    throw ShapeError(name + ": generator layer " + std::to_string(i) + " expects " +
                                     std::to_string(conv->geom.in_channels) + " channels, got " +
                                     std::to_string(s.c));
                s = Shape3{conv->geom.out_channels, conv->geom.out_h(s.h), conv->geom.out_w(s.w)};
            } else if (const auto* pool = std::get_if<PoolLayer>(&layer)) {
                s = Shape3{s.c, pool->geom.out_extent(s.h), pool->geom.out_extent(s.w)};
            } else {
                throw ShapeError(name + ": generator part admits conv and pool layers only");
            }
        }
        return s;
    }

    int64_t class_count() const {
        for (auto it = classifier_layers.rbegin(); it != classifier_layers.rend(); ++it)
            if (const auto* dense = std::get_if<DenseLayer>(&*it)) return dense->out_features;
        throw ShapeError(name + ": classifier has no dense layer");
    }

    void validate() const {
        const Shape3 fm = generator_output();
        int64_t features = -1;  // -1 while still shaped [N,C,H,W]
        for (size_t i = 0; i < classifier_layers.size(); ++i) {
            const auto& layer = classifier_layers[i];
            if (std::holds_alternative<FlattenLayer>(layer)) {
                if (features != -1) throw ShapeError(name + ": duplicate flatten in classifier");
                features = fm.numel();
            } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
                if (features == -1) throw ShapeError(name + ": dense before flatten in classifier");
                if (dense->in_features != features)
                    throw ShapeError(name + ": classifier layer " + std::to_string(i) + " expects " +
                                     std::to_string(dense->in_features) + " features, got " +
                                     std::to_string(features));
                features = dense->out_features;
            } else {
                throw ShapeError(name + ": classifier part admits flatten and dense layers only");
            }
        }
        if (features == -1) throw ShapeError(name + ": classifier is empty");
    }
};

template <typename T>
struct ParamGroup {
    Tensor<T> weight;
    Tensor<T> bias;
    bool frozen = false;
};

// Named parameter groups, one per conv/dense layer; map gives deterministic
// iteration order everywhere (init, serialization, hashing).
template <typename T>
struct NetworkState {
    std::map<std::string, ParamGroup<T>> groups;

    void freeze_all() {
        for (auto& [name, g] : groups) g.frozen = true;
    }

    void check_finite(const std::string& what) const {
        for (const auto& [name, g] : groups) {
            g.weight.check_finite(what + " " + name + ".weight");
            g.bias.check_finite(what + " " + name + ".bias");
        }
    }

    bool operator==(const NetworkState& o) const {
        if (groups.size() != o.groups.size()) return false;
        for (const auto& [name, g] : groups) {
            auto it = o.groups.find(name);
            if (it == o.groups.end()) return false;
            if (!(g.weight == it->second.weight) || !(g.bias == it->second.bias)) return false;
        }
        return true;
    }
};

inline std::string group_key(const char* part, size_t layer_index) {
    return std::string(part) + "." + std::to_string(layer_index);
}

// Fan-in-scaled Gaussian (variance 2/fan_in) for conv and dense weights,
// zero biases. Draw order is fixed: generator layers then classifier layers.
template <typename T>
NetworkState<T> init_network(const NetworkSpec& spec, Rng& rng) {
    spec.validate();
    NetworkState<T> state;
    auto init_conv = [&](const ConvLayer& conv, const std::string& key) {
        const auto& g = conv.geom;
        Tensor<T> w({g.out_channels, g.in_channels, g.kernel_h, g.kernel_w});
        const double fan_in = static_cast<double>(g.in_channels * g.kernel_h * g.kernel_w);
        rng.fill_normal(w, std::sqrt(2.0 / fan_in));
        state.groups[key] = ParamGroup<T>{std::move(w), Tensor<T>({g.out_channels}), false};
    };
    auto init_dense = [&](const DenseLayer& dense, const std::string& key) {
        Tensor<T> w({dense.in_features, dense.out_features});
        rng.fill_normal(w, std::sqrt(2.0 / static_cast<double>(dense.in_features)));
        state.groups[key] = ParamGroup<T>{std::move(w), Tensor<T>({dense.out_features}), false};
    };
    for (size_t i = 0; i < spec.generator_layers.size(); ++i)
        if (const auto* conv = std::get_if<ConvLayer>(&spec.generator_layers[i]))
            init_conv(*conv, group_key("gen", i));
    for (size_t i = 0; i < spec.classifier_layers.size(); ++i)
        if (const auto* dense = std::get_if<DenseLayer>(&spec.classifier_layers[i]))
            init_dense(*dense, group_key("cls", i));
    return state;
}

template <typename T>
NetworkState<T> init_network(const NetworkSpec& spec, uint64_t seed) {
    Rng rng(seed);
    return init_network<T>(spec, rng);
}

// Tape leaves for a state's parameters; frozen or non-trainable bindings
// become constants so no gradient work happens for them.
template <typename T>
struct Binding {
    std::map<std::string, std::pair<Var, Var>> vars;
};

template <typename T>
Binding<T> bind_state(Tape<T>& tape, const NetworkState<T>& state, bool trainable) {
    Binding<T> b;
    for (const auto& [name, g] : state.groups) {
        const bool grad = trainable && !g.frozen;
        b.vars[name] = {tape.leaf(g.weight, grad), tape.leaf(g.bias, grad)};
    }
    return b;
}

// Selective binding: groups whose name fails the predicate become constants.
// Algorithm 2's sub-updates use this to train the generator while gradients
// still flow through the classifier's (or discriminator's) fixed weights.
template <typename T, typename Pred>
Binding<T> bind_state_filtered(Tape<T>& tape, const NetworkState<T>& state, Pred trainable) {
    Binding<T> b;
    for (const auto& [name, g] : state.groups) {
        const bool grad = trainable(name) && !g.frozen;
        b.vars[name] = {tape.leaf(g.weight, grad), tape.leaf(g.bias, grad)};
    }
    return b;
}

namespace detail {

template <typename T>
Var apply_layers(Tape<T>& tape, const std::vector<LayerDesc>& layers, const char* part,
                 const Binding<T>& binding, Var x) {
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& layer = layers[i];
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            const auto& [w, b] = binding.vars.at(group_key(part, i));
            x = ops::conv2d(tape, x, w, b, conv->geom);
            if (conv->act == Activation::relu) x = ops::relu(tape, x);
        } else if (const auto* pool = std::get_if<PoolLayer>(&layer)) {
            x = ops::max_pool2d(tape, x, pool->geom);
        } else if (std::holds_alternative<FlattenLayer>(layer)) {
            x = ops::flatten(tape, x);
        } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
            const auto& [w, b] = binding.vars.at(group_key(part, i));
            x = ops::dense(tape, x, w, b);
            if (dense->act == Activation::relu) x = ops::relu(tape, x);
        }
    }
    return x;
}

template <typename T>
Tensor<T> apply_layers_eval(const std::vector<LayerDesc>& layers, const char* part,
                            const NetworkState<T>& state, Tensor<T> x) {
    for (size_t i = 0; i < layers.size(); ++i) {
        const auto& layer = layers[i];
        if (const auto* conv = std::get_if<ConvLayer>(&layer)) {
            const auto& g = state.groups.at(group_key(part, i));
            x = kernels::conv2d_forward(x, g.weight, g.bias, conv->geom);
            if (conv->act == Activation::relu) x = kernels::relu_forward(x);
        } else if (const auto* pool = std::get_if<PoolLayer>(&layer)) {
            x = kernels::maxpool_forward(x, pool->geom).first;
        } else if (std::holds_alternative<FlattenLayer>(layer)) {
            x = x.reshaped({x.extent(0), x.numel() / x.extent(0)});
        } else if (const auto* dense = std::get_if<DenseLayer>(&layer)) {
            const auto& g = state.groups.at(group_key(part, i));
            x = kernels::dense_forward(x, g.weight, g.bias);
            if (dense->act == Activation::relu) x = kernels::relu_forward(x);
        }
    }
    return x;
}

template <typename T>
void check_batch_shape(const NetworkSpec& spec, const Tensor<T>& batch) {
    if (batch.rank() != 4 || batch.extent(1) != spec.input.c || batch.extent(2) != spec.input.h ||
        batch.extent(3) != spec.input.w)
        throw ShapeError(spec.name + ": batch " + shape_str(batch.shape()) + " does not match input " +
                         spec.input.str());
}

}  // namespace detail

// Output of the last generator layer: the network's feature map.
template <typename T>
Var forward_generator(Tape<T>& tape, const NetworkSpec& spec, const Binding<T>& binding, Var batch) {
    detail::check_batch_shape(spec, tape.value(batch));
    return detail::apply_layers(tape, spec.generator_layers, "gen", binding, batch);
}

template <typename T>
Var forward_classifier(Tape<T>& tape, const NetworkSpec& spec, const Binding<T>& binding, Var feature_map) {
    return detail::apply_layers(tape, spec.classifier_layers, "cls", binding, feature_map);
}

// Inference-mode forwards: plain kernels, no tape.
template <typename T>
Tensor<T> forward_generator(const NetworkSpec& spec, const NetworkState<T>& state, const Tensor<T>& batch) {
    detail::check_batch_shape(spec, batch);
    return detail::apply_layers_eval(spec.generator_layers, "gen", state, batch);
}

template <typename T>
Tensor<T> forward_classifier(const NetworkSpec& spec, const NetworkState<T>& state,
                             const Tensor<T>& feature_map) {
    return detail::apply_layers_eval(spec.classifier_layers, "cls", state, feature_map);
}

template <typename T>
Tensor<T> forward_network(const NetworkSpec& spec, const NetworkState<T>& state, const Tensor<T>& batch) {
    return forward_classifier(spec, state, forward_generator(spec, state, batch));
}

// Per-group (weight, bias) gradients for every trainable binding.
template <typename T>
using GradMap = std::map<std::string, std::pair<Tensor<T>, Tensor<T>>>;

template <typename T>
GradMap<T> collect_grads(const Tape<T>& tape, const Binding<T>& binding) {
    GradMap<T> grads;
    for (const auto& [name, wb] : binding.vars)
        if (tape.requires_grad(wb.first))
            grads[name] = {tape.grad(wb.first), tape.grad(wb.second)};
    return grads;
}

}  // namespace ktan
