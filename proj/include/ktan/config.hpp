#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "ktan/dataset.hpp"
#include "ktan/hash.hpp"
#include "ktan/metrics.hpp"

namespace ktan {

// One table drives the parser, the defaults, and the generated reference, so
// the accepted key set and the documented key set cannot drift apart.
struct ConfigKey {
    const char* section;
    const char* key;
    const char* type;  // string | int | uint | float | bool | int_list
    const char* def;
    const char* doc;
};

inline constexpr std::array<ConfigKey, 44> kConfigKeys{{
    {"dataset", "kind", "string", "synthetic", "dataset source: synthetic or file"},
    {"dataset", "classes", "int", "4", "synthetic class count (2..8)"},
    {"dataset", "train_per_class", "int", "500", "synthetic training samples per class"},
    {"dataset", "test_per_class", "int", "100", "synthetic test samples per class"},
    {"dataset", "image_size", "int", "16", "synthetic image height/width (>= 8)"},
    {"dataset", "channels", "int", "1", "synthetic image channels (1 or 3)"},
    {"dataset", "noise", "float", "0.08", "synthetic additive noise stddev"},
    {"dataset", "seed", "uint", "7", "dataset generation seed"},
    {"dataset", "train_file", "string", "", "train split path when kind = file"},
    {"dataset", "test_file", "string", "", "test split path when kind = file"},
    {"dataset", "augment", "bool", "true", "random flips and crops on train batches"},
    {"dataset", "flip_prob", "float", "0.5", "horizontal flip probability"},
    {"dataset", "crop_padding", "int", "2", "zero padding before the random crop"},
    {"teacher", "arch", "string", "desk_teacher", "teacher architecture preset"},
    {"teacher", "checkpoint", "string", "", "trained teacher checkpoint (transfer methods)"},
    {"teacher", "regressor_checkpoint", "string", "", "trained teacher-to-student layer checkpoint"},
    {"student", "arch", "string", "desk_student", "student architecture preset"},
    {"method", "name", "string", "student", "teacher|student|kd|dln|ktan|ktan_kd"},
    {"method", "beta", "float", "0.5", "feature-map MSE weight"},
    {"method", "temperature", "float", "4", "KD softmax temperature"},
    {"method", "kd_weight", "float", "0.9", "weight on the teacher cross-entropy term"},
    {"method", "kd_t_squared", "bool", "true", "scale the KD soft term by T^2"},
    {"method", "fitnet", "bool", "false", "dln only: weight the MSE term by fitnet_weight"},
    {"method", "fitnet_weight", "float", "4", "transfer-loss weight for the FitNet configuration"},
    {"method", "k_pretrain_steps", "int", "-1", "ktan pretraining steps (-1 = one epoch)"},
    {"method", "regressor_steps", "int", "-1", "teacher-to-student training steps (-1 = one epoch)"},
    {"method", "regressor_lr", "float", "0.2", "teacher-to-student training learning rate"},
    {"method", "regressor_stride", "int", "1", "regressor conv stride"},
    {"method", "regressor_padding", "int", "0", "regressor conv padding"},
    {"adversarial", "alpha", "float", "0.6", "adversarial loss weight"},
    {"adversarial", "iterations", "int", "-1", "adversarial training steps (-1 = one epoch)"},
    {"adversarial", "lr", "float", "0.01", "learning rate for the adversarial stage"},
    {"adversarial", "d_steps", "int", "1", "discriminator updates per iteration"},
    {"adversarial", "disc_channels", "int", "16", "discriminator conv output channels"},
    {"optimizer", "lr", "float", "0.2", "main-stage learning rate"},
    {"optimizer", "momentum", "float", "0.9", "SGD momentum coefficient"},
    {"optimizer", "weight_decay", "float", "1e-4", "L2 weight decay"},
    {"optimizer", "batch_size", "int", "32", "mini-batch size"},
    {"optimizer", "epochs", "int", "15", "training epochs for epoch-driven methods"},
    {"optimizer", "seed", "uint", "1", "training seed (init, shuffling, augmentation)"},
    {"optimizer", "eval_train", "bool", "false", "also evaluate train accuracy each epoch"},
    {"optimizer", "decay_epochs", "int_list", "", "epochs at which lr is multiplied by decay_factor"},
    {"optimizer", "decay_factor", "float", "0.1", "step decay multiplier"},
    {"output", "dir", "string", "out", "output directory for metrics and checkpoints"},
}};

class ParsedConfig {
public:
    static ParsedConfig from_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return from_string(ss.str(), path);
    }

    static ParsedConfig from_string(const std::string& text, const std::string& origin = "<string>") {
        ParsedConfig cfg;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            auto hash = line.find_first_of("#;");
            if (hash != std::string::npos) line.erase(hash);
            auto trim = [](std::string s) {
                const auto b = s.find_first_not_of(" \t\r");
                const auto e = s.find_last_not_of(" \t\r");
                return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
            };
            line = trim(line);
            if (line.empty()) continue;
            if (line.front() == '[') {
                if (line.back() != ']')
                    throw ConfigError(origin + ":" + std::to_string(lineno) + ": malformed section header");
                section = trim(line.substr(1, line.size() - 2));
                continue;
            }
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            const std::string value = trim(line.substr(eq + 1));
            if (section.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": key '" + key +
                                  "' outside any section");
            if (!known(section, key))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + section +
                                  "." + key + "'");
            const std::string full = section + "." + key;
            if (cfg.values_.count(full))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + full + "'");
            cfg.values_[full] = value;
        }
        return cfg;
    }

    static bool known(const std::string& section, const std::string& key) {
        return find_key(section, key) != nullptr;
    }

    static const ConfigKey* find_key(const std::string& section, const std::string& key) {
        for (const auto& k : kConfigKeys)
            if (section == k.section && key == k.key) return &k;
        return nullptr;
    }

    std::string get(const std::string& section, const std::string& key) const {
        const ConfigKey* spec = find_key(section, key);
        if (!spec) throw ConfigError("internal: unregistered key " + section + "." + key);
        auto it = values_.find(section + "." + key);
        return it == values_.end() ? spec->def : it->second;
    }

    int64_t get_int(const std::string& section, const std::string& key) const {
        const std::string v = get(section, key);
        try {
            size_t pos = 0;
            const int64_t r = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw ConfigError("key '" + section + "." + key + "': expected integer, got '" + v + "'");
        }
    }

    uint64_t get_uint(const std::string& section, const std::string& key) const {
        const std::string v = get(section, key);
        try {
            size_t pos = 0;
            const uint64_t r = std::stoull(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw ConfigError("key '" + section + "." + key + "': expected unsigned integer, got '" + v + "'");
        }
    }

    double get_float(const std::string& section, const std::string& key) const {
        const std::string v = get(section, key);
        try {
            size_t pos = 0;
            const double r = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw ConfigError("key '" + section + "." + key + "': expected number, got '" + v + "'");
        }
    }

    bool get_bool(const std::string& section, const std::string& key) const {
        const std::string v = get(section, key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw ConfigError("key '" + section + "." + key + "': expected boolean, got '" + v + "'");
    }

    std::vector<int64_t> get_int_list(const std::string& section, const std::string& key) const {
        const std::string v = get(section, key);
        std::vector<int64_t> out;
        std::string item;
        std::istringstream is(v);
        while (std::getline(is, item, ',')) {
            if (item.empty()) continue;
            try {
                out.push_back(std::stoll(item));
            } catch (const std::exception&) {
                throw ConfigError("key '" + section + "." + key + "': bad list entry '" + item + "'");
            }
        }
        return out;
    }

    bool is_set(const std::string& section, const std::string& key) const {
        return values_.count(section + "." + key) > 0;
    }

private:
    std::map<std::string, std::string> values_;
};

enum class Method { teacher, student, kd, dln, ktan, ktan_kd };

inline const char* method_name(Method m) {
    switch (m) {
        case Method::teacher: return "teacher";
        case Method::student: return "student";
        case Method::kd: return "kd";
        case Method::dln: return "dln";
        case Method::ktan: return "ktan";
        case Method::ktan_kd: return "ktan_kd";
    }
    return "?";
}

inline Method method_from(const std::string& s) {
    for (Method m : {Method::teacher, Method::student, Method::kd, Method::dln, Method::ktan,
                     Method::ktan_kd})
        if (s == method_name(m)) return m;
    throw ConfigError("key 'method.name': unknown method '" + s +
                      "' (expected teacher|student|kd|dln|ktan|ktan_kd)");
}

// Fully resolved experiment description; captures everything a reproducible
// run needs, including the seed.
struct ExperimentConfig {
    // dataset
    std::string dataset_kind;
    SyntheticSpec synth;
    uint64_t dataset_seed = 7;
    std::string train_file, test_file;
    AugmentConfig augment;

    // architectures and prerequisite artifacts
    std::string teacher_arch, student_arch;
    std::string teacher_checkpoint, regressor_checkpoint;

    // method
    Method method = Method::student;
    double beta = 0.5;
    double temperature = 4;
    double kd_weight = 0.9;
    bool kd_t_squared = true;
    bool fitnet = false;
    double fitnet_weight = 4;
    int64_t k_pretrain_steps = -1;
    int64_t regressor_steps = -1;
    double regressor_lr = 0.2;
    int64_t regressor_stride = 1;
    int64_t regressor_padding = 0;

    // adversarial stage
    double alpha = 0.6;
    int64_t adversarial_iterations = -1;
    double lr_adversarial = 0.01;
    int64_t d_steps = 1;
    int64_t disc_channels = 16;

    // optimizer
    double lr = 0.2;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    int64_t batch_size = 32;
    int64_t epochs = 15;
    uint64_t seed = 1;
    bool eval_train = false;
    std::vector<int64_t> decay_epochs;
    double decay_factor = 0.1;

    // output
    std::string out_dir = "out";

    static ExperimentConfig load(const ParsedConfig& p) {
        ExperimentConfig c;
        c.dataset_kind = p.get("dataset", "kind");
        c.synth.classes = p.get_int("dataset", "classes");
        c.synth.train_per_class = p.get_int("dataset", "train_per_class");
        c.synth.test_per_class = p.get_int("dataset", "test_per_class");
        c.synth.image_size = p.get_int("dataset", "image_size");
        c.synth.channels = p.get_int("dataset", "channels");
        c.synth.noise = p.get_float("dataset", "noise");
        c.dataset_seed = p.get_uint("dataset", "seed");
        c.train_file = p.get("dataset", "train_file");
        c.test_file = p.get("dataset", "test_file");
        c.augment.enabled = p.get_bool("dataset", "augment");
        c.augment.flip_prob = p.get_float("dataset", "flip_prob");
        c.augment.crop_padding = p.get_int("dataset", "crop_padding");

        c.teacher_arch = p.get("teacher", "arch");
        c.teacher_checkpoint = p.get("teacher", "checkpoint");
        c.regressor_checkpoint = p.get("teacher", "regressor_checkpoint");
        c.student_arch = p.get("student", "arch");

        c.method = method_from(p.get("method", "name"));
        c.beta = p.get_float("method", "beta");
        c.temperature = p.get_float("method", "temperature");
        c.kd_weight = p.get_float("method", "kd_weight");
        c.kd_t_squared = p.get_bool("method", "kd_t_squared");
        c.fitnet = p.get_bool("method", "fitnet");
        c.fitnet_weight = p.get_float("method", "fitnet_weight");
        c.k_pretrain_steps = p.get_int("method", "k_pretrain_steps");
        c.regressor_steps = p.get_int("method", "regressor_steps");
        c.regressor_lr = p.get_float("method", "regressor_lr");
        c.regressor_stride = p.get_int("method", "regressor_stride");
        c.regressor_padding = p.get_int("method", "regressor_padding");

        c.alpha = p.get_float("adversarial", "alpha");
        c.adversarial_iterations = p.get_int("adversarial", "iterations");
        c.lr_adversarial = p.get_float("adversarial", "lr");
        c.d_steps = p.get_int("adversarial", "d_steps");
        c.disc_channels = p.get_int("adversarial", "disc_channels");

        c.lr = p.get_float("optimizer", "lr");
        c.momentum = p.get_float("optimizer", "momentum");
        c.weight_decay = p.get_float("optimizer", "weight_decay");
        c.batch_size = p.get_int("optimizer", "batch_size");
        c.epochs = p.get_int("optimizer", "epochs");
        c.seed = p.get_uint("optimizer", "seed");
        c.eval_train = p.get_bool("optimizer", "eval_train");
        c.decay_epochs = p.get_int_list("optimizer", "decay_epochs");
        c.decay_factor = p.get_float("optimizer", "decay_factor");

        c.out_dir = p.get("output", "dir");
        c.validate();
        return c;
    }

    static ExperimentConfig load_file(const std::string& path) {
        return load(ParsedConfig::from_file(path));
    }

    void validate() const {
        if (dataset_kind != "synthetic" && dataset_kind != "file")
            throw ConfigError("key 'dataset.kind': expected synthetic or file, got '" + dataset_kind + "'");
        if (dataset_kind == "file" && (train_file.empty() || test_file.empty()))
            throw ConfigError("dataset.kind = file requires dataset.train_file and dataset.test_file");
        augment.validate();
        if (alpha < 0 || beta < 0 || fitnet_weight < 0 || lr < 0 || lr_adversarial < 0 ||
            regressor_lr < 0 || weight_decay < 0 || momentum < 0)
            throw ConfigError("rates and loss weights must be non-negative");
        if (temperature <= 0) throw ConfigError("key 'method.temperature': must be positive");
        if (kd_weight < 0 || kd_weight > 1) throw ConfigError("key 'method.kd_weight': must be in [0,1]");
        if (batch_size < 1) throw ConfigError("key 'optimizer.batch_size': must be >= 1");
        if (epochs < 1) throw ConfigError("key 'optimizer.epochs': must be >= 1");
        if (k_pretrain_steps < -1 || adversarial_iterations < -1 || regressor_steps < -1)
            throw ConfigError("step counts must be >= 0, or -1 for one epoch");
        if (d_steps < 1) throw ConfigError("key 'adversarial.d_steps': must be >= 1");
        if (disc_channels < 1) throw ConfigError("key 'adversarial.disc_channels': must be >= 1");
        if (fitnet && method != Method::dln)
            throw ConfigError("key 'method.fitnet': only valid with method.name = dln");
        if (regressor_stride < 1 || regressor_padding < 0)
            throw ConfigError("regressor stride must be >= 1 and padding >= 0");
    }

    // Canonical key=value dump of the resolved configuration, stable order.
    std::string canonical() const {
        std::ostringstream os;
        os << "adversarial.alpha=" << fmt_double(alpha) << '\n'
           << "adversarial.d_steps=" << d_steps << '\n'
           << "adversarial.disc_channels=" << disc_channels << '\n'
           << "adversarial.iterations=" << adversarial_iterations << '\n'
           << "adversarial.lr=" << fmt_double(lr_adversarial) << '\n'
           << "dataset.augment=" << (augment.enabled ? "true" : "false") << '\n'
           << "dataset.channels=" << synth.channels << '\n'
           << "dataset.classes=" << synth.classes << '\n'
           << "dataset.crop_padding=" << augment.crop_padding << '\n'
           << "dataset.flip_prob=" << fmt_double(augment.flip_prob) << '\n'
           << "dataset.image_size=" << synth.image_size << '\n'
           << "dataset.kind=" << dataset_kind << '\n'
           << "dataset.noise=" << fmt_double(synth.noise) << '\n'
           << "dataset.seed=" << dataset_seed << '\n'
           << "dataset.test_file=" << test_file << '\n'
           << "dataset.test_per_class=" << synth.test_per_class << '\n'
           << "dataset.train_file=" << train_file << '\n'
           << "dataset.train_per_class=" << synth.train_per_class << '\n'
           << "method.beta=" << fmt_double(beta) << '\n'
           << "method.fitnet=" << (fitnet ? "true" : "false") << '\n'
           << "method.fitnet_weight=" << fmt_double(fitnet_weight) << '\n'
           << "method.k_pretrain_steps=" << k_pretrain_steps << '\n'
           << "method.kd_t_squared=" << (kd_t_squared ? "true" : "false") << '\n'
           << "method.kd_weight=" << fmt_double(kd_weight) << '\n'
           << "method.name=" << method_name(method) << '\n'
           << "method.regressor_lr=" << fmt_double(regressor_lr) << '\n'
           << "method.regressor_padding=" << regressor_padding << '\n'
           << "method.regressor_steps=" << regressor_steps << '\n'
           << "method.regressor_stride=" << regressor_stride << '\n'
           << "method.temperature=" << fmt_double(temperature) << '\n'
           << "optimizer.batch_size=" << batch_size << '\n'
           << "optimizer.decay_epochs=";
        for (size_t i = 0; i < decay_epochs.size(); ++i) os << (i ? "," : "") << decay_epochs[i];
        os << '\n'
           << "optimizer.decay_factor=" << fmt_double(decay_factor) << '\n'
           << "optimizer.epochs=" << epochs << '\n'
           << "optimizer.eval_train=" << (eval_train ? "true" : "false") << '\n'
           << "optimizer.lr=" << fmt_double(lr) << '\n'
           << "optimizer.momentum=" << fmt_double(momentum) << '\n'
           << "optimizer.seed=" << seed << '\n'
           << "optimizer.weight_decay=" << fmt_double(weight_decay) << '\n'
           << "student.arch=" << student_arch << '\n'
           << "teacher.arch=" << teacher_arch << '\n'
           << "teacher.checkpoint=" << teacher_checkpoint << '\n'
           << "teacher.regressor_checkpoint=" << regressor_checkpoint << '\n';
        return os.str();
    }

    uint64_t hash() const { return fnv1a64(canonical()); }
};

// Human-readable listing of every accepted key with its type and default.
inline std::string config_reference() {
    std::ostringstream os;
    os << "Configuration reference (INI sections, '#' comments)\n";
    std::string current;
    auto emit = [&](const ConfigKey& k) {
        if (current != k.section) {
            current = k.section;
            os << "\n[" << current << "]\n";
        }
        os << "  " << k.key << " (" << k.type << ", default: " << (*k.def ? k.def : "<empty>") << ") -- "
           << k.doc << "\n";
    };
    for (const auto& k : kConfigKeys) emit(k);
    return os.str();
}

}  // namespace ktan
