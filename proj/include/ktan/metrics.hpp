#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ktan/errors.hpp"

namespace ktan {

enum class Phase : uint32_t { pretrain = 0, adversarial = 1, eval = 2 };

inline const char* phase_name(Phase p) {
    switch (p) {
        case Phase::pretrain: return "pretrain";
        case Phase::adversarial: return "adversarial";
        case Phase::eval: return "eval";
    }
    return "?";
}

inline Phase phase_from(const std::string& s) {
    if (s == "pretrain") return Phase::pretrain;
    if (s == "adversarial") return Phase::adversarial;
    if (s == "eval") return Phase::eval;
    throw FormatError("unknown phase: " + s);
}

// Shortest round-trip decimal representation; locale-free and deterministic.
inline std::string fmt_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, ptr);
}

// One training or evaluation event. Loss fields hold the weighted
// contribution of each component to the objective actually optimized, so
// method reductions (beta = 0, alpha = 0) log identical records. Wall-clock
// is kept off the serialized form; metrics files must be byte-reproducible.
struct MetricsRecord {
    Phase phase = Phase::pretrain;
    int64_t iteration = 0;
    int64_t epoch = 0;
    // train phases
    double ce = 0, kd = 0, mse_fm = 0, adv_g = 0, adv_d = 0, total = 0;
    double d_teacher = 0, d_student = 0;
    // eval phase
    std::string eval_split;
    double accuracy = 0;
    // console reporting only
    double wall_seconds = 0;

    static MetricsRecord train(Phase phase, int64_t iteration, int64_t epoch) {
        MetricsRecord r;
        r.phase = phase;
        r.iteration = iteration;
        r.epoch = epoch;
        return r;
    }

    static MetricsRecord evaluation(int64_t iteration, int64_t epoch, std::string split, double acc) {
        MetricsRecord r;
        r.phase = Phase::eval;
        r.iteration = iteration;
        r.epoch = epoch;
        r.eval_split = std::move(split);
        r.accuracy = acc;
        return r;
    }

    std::string line() const {
        std::ostringstream os;
        os << "phase=" << phase_name(phase) << " iter=" << iteration << " epoch=" << epoch;
        if (phase == Phase::eval) {
            os << " split=" << eval_split << " accuracy=" << fmt_double(accuracy);
        } else {
            os << " ce=" << fmt_double(ce) << " kd=" << fmt_double(kd) << " mse_fm=" << fmt_double(mse_fm)
               << " adv_g=" << fmt_double(adv_g) << " adv_d=" << fmt_double(adv_d)
               << " d_teacher=" << fmt_double(d_teacher) << " d_student=" << fmt_double(d_student)
               << " total=" << fmt_double(total);
        }
        return os.str();
    }

    static MetricsRecord parse(const std::string& line);
};

namespace detail {

inline double parse_double(const std::string& s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size())
        throw FormatError("bad numeric field: " + s);
    return v;
}

}  // namespace detail

inline MetricsRecord MetricsRecord::parse(const std::string& line) {
    MetricsRecord r;
    std::istringstream is(line);
    std::string kv;
    bool saw_phase = false;
    while (is >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw FormatError("bad metrics field: " + kv);
        const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
        if (key == "phase") {
            r.phase = phase_from(val);
            saw_phase = true;
        } else if (key == "iter")
            r.iteration = static_cast<int64_t>(detail::parse_double(val));
        else if (key == "epoch")
            r.epoch = static_cast<int64_t>(detail::parse_double(val));
        else if (key == "ce")
            r.ce = detail::parse_double(val);
        else if (key == "kd")
            r.kd = detail::parse_double(val);
        else if (key == "mse_fm")
            r.mse_fm = detail::parse_double(val);
        else if (key == "adv_g")
            r.adv_g = detail::parse_double(val);
        else if (key == "adv_d")
            r.adv_d = detail::parse_double(val);
        else if (key == "total")
            r.total = detail::parse_double(val);
        else if (key == "d_teacher")
            r.d_teacher = detail::parse_double(val);
        else if (key == "d_student")
            r.d_student = detail::parse_double(val);
        else if (key == "split")
            r.eval_split = val;
        else if (key == "accuracy")
            r.accuracy = detail::parse_double(val);
        else
            throw FormatError("unknown metrics key: " + key);
    }
    if (!saw_phase) throw FormatError("metrics line without phase: " + line);
    return r;
}

// Append-only per-run log, optionally mirrored to a file as records arrive.
class MetricsLog {
public:
    MetricsLog() = default;

    void open_file(const std::string& path) {
        file_.open(path);
        if (!file_) throw FormatError("cannot open metrics file: " + path);
    }

    void append(const MetricsRecord& r) {
        records_.push_back(r);
        if (file_.is_open()) file_ << r.line() << '\n';
    }

    void flush() {
        if (file_.is_open()) file_.flush();
    }

    const std::vector<MetricsRecord>& records() const { return records_; }

    static std::vector<MetricsRecord> read_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw FormatError("cannot read metrics file: " + path);
        std::vector<MetricsRecord> out;
        std::string line;
        while (std::getline(in, line))
            if (!line.empty()) out.push_back(MetricsRecord::parse(line));
        return out;
    }

private:
    std::vector<MetricsRecord> records_;
    std::ofstream file_;
};

}  // namespace ktan
