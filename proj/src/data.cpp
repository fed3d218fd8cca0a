#include "mtkd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace mtkd {
namespace {

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t mix(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// `count` distinct sign patterns over `dims` dimensions, none all-zero.
std::vector<Vector> sign_codes(std::size_t count, std::size_t dims, double amplitude, Rng& rng) {
    const std::size_t patterns = dims >= 20 ? (std::size_t{1} << 20) : (std::size_t{1} << dims);
    if (count > patterns) throw ValidationError("task: too many codes for the prototype half");
    std::vector<Vector> codes;
    std::vector<std::uint64_t> used;
    while (codes.size() < count) {
        std::uint64_t bits = 0;
        Vector code(static_cast<Eigen::Index>(dims));
        for (std::size_t d = 0; d < dims; ++d) {
            const bool up = rng.below(2) == 1;
            bits = (bits << 1) | (up ? 1u : 0u);
            code[static_cast<Eigen::Index>(d)] = up ? amplitude : -amplitude;
        }
        if (dims < 64 && std::find(used.begin(), used.end(), bits) != used.end()) continue;
        used.push_back(bits);
        codes.push_back(std::move(code));
    }
    return codes;
}

}  // namespace

void TaskConfig::validate() const {
    if (input_dim < 2) throw ValidationError("task: input_dim must be >= 2");
    if (vocab < 2) throw ValidationError("task: vocab must be >= 2");
    if (min_frames < 2 || max_frames < min_frames) {
        throw ValidationError("task: need 2 <= min_frames <= max_frames");
    }
    if (!(noise >= 0.0) || !(amplitude > 0.0)) {
        throw ValidationError("task: noise must be >= 0 and amplitude > 0");
    }
}

std::size_t TaskConfig::group_size() const {
    std::size_t m = 1;
    while (m * m < vocab - 1) ++m;
    return m;
}

void to_json(nlohmann::json& j, const TaskConfig& c) {
    j = nlohmann::json{{"seed", c.seed},           {"input_dim", c.input_dim},
                       {"vocab", c.vocab},         {"noise", c.noise},
                       {"amplitude", c.amplitude}, {"min_frames", c.min_frames},
                       {"max_frames", c.max_frames}};
}

void from_json(const nlohmann::json& j, TaskConfig& c) {
    const std::string where = "task";
    check_keys(j, {"seed", "input_dim", "vocab", "noise", "amplitude", "min_frames", "max_frames"},
               where);
    const TaskConfig d;
    c.seed = config_value(j, "seed", d.seed, where);
    c.input_dim = config_value(j, "input_dim", d.input_dim, where);
    c.vocab = config_value(j, "vocab", d.vocab, where);
    c.noise = config_value(j, "noise", d.noise, where);
    c.amplitude = config_value(j, "amplitude", d.amplitude, where);
    c.min_frames = config_value(j, "min_frames", d.min_frames, where);
    c.max_frames = config_value(j, "max_frames", d.max_frames, where);
}

SyntheticTask::SyntheticTask(const TaskConfig& config) : config_(config) {
    config_.validate();
    const std::size_t V = config_.vocab;
    const std::size_t D = config_.input_dim;
    const std::size_t half_a = D / 2;
    const std::size_t half_b = D - half_a;
    const std::size_t m = config_.group_size();
    const std::size_t groups = (V - 2) / m + 1;
    Rng rng(mix(config_.seed));
    const auto codes_a = sign_codes(groups, half_a, config_.amplitude, rng);
    const auto codes_b = sign_codes(std::min(m, V - 1), half_b, config_.amplitude, rng);
    prototypes_ = Matrix::Zero(static_cast<Eigen::Index>(V), static_cast<Eigen::Index>(D));
    for (std::size_t k = 1; k < V; ++k) {
        const auto row = static_cast<Eigen::Index>(k);
        prototypes_.block(row, 0, 1, static_cast<Eigen::Index>(half_a)) =
            codes_a[(k - 1) / m].transpose();
        prototypes_.block(row, static_cast<Eigen::Index>(half_a), 1, static_cast<Eigen::Index>(half_b)) =
            codes_b[(k - 1) % m].transpose();
    }
}

Utterance SyntheticTask::utterance(const std::string& split, std::size_t index) const {
    Rng rng(mix(config_.seed ^ mix(fnv1a(split) + index)));
    const int T = rng.range(static_cast<int>(config_.min_frames), static_cast<int>(config_.max_frames));
    std::vector<int> classes(static_cast<std::size_t>(T), 0);
    Utterance utt;
    char id[64];
    std::snprintf(id, sizeof id, "%s-%05zu", split.c_str(), index);
    utt.id = id;

    int t = rng.range(0, 2);
    int previous = 0;
    while (t + 2 <= T) {
        const int length = std::min(rng.range(2, 4), T - t);
        int token = 0;
        do {
            token = 1 + static_cast<int>(rng.below(config_.vocab - 1));
        } while (config_.vocab > 2 && token == previous);
        classes[static_cast<std::size_t>(t)] = token;
        utt.tokens.push_back(token);
        previous = token;
        t += length;
    }

    utt.features.resize(T, static_cast<Eigen::Index>(config_.input_dim));
    for (int f = 0; f < T; ++f) {
        for (Eigen::Index d = 0; d < utt.features.cols(); ++d) {
            utt.features(f, d) = prototypes_(classes[static_cast<std::size_t>(f)], d) + config_.noise * rng.normal();
        }
    }
    return utt;
}

std::vector<Utterance> SyntheticTask::split(const std::string& name, std::size_t count) const {
    std::vector<Utterance> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(utterance(name, i));
    return out;
}

void to_json(nlohmann::json& j, const MaskConfig& c) {
    j = nlohmann::json{{"enabled", c.enabled}, {"max_time", c.max_time}, {"max_feature", c.max_feature}};
}

void from_json(const nlohmann::json& j, MaskConfig& c) {
    const std::string where = "masking";
    check_keys(j, {"enabled", "max_time", "max_feature"}, where);
    const MaskConfig d;
    c.enabled = config_value(j, "enabled", d.enabled, where);
    c.max_time = config_value(j, "max_time", d.max_time, where);
    c.max_feature = config_value(j, "max_feature", d.max_feature, where);
}

Matrix apply_mask(const Matrix& features, const MaskConfig& config, Rng& rng) {
    if (!config.enabled) return features;
    Matrix out = features;
    const auto T = static_cast<std::size_t>(features.rows());
    const auto D = static_cast<std::size_t>(features.cols());
    const std::size_t tw = std::min<std::size_t>(rng.below(config.max_time + 1), T);
    const std::size_t t0 = rng.below(T - tw + 1);
    const std::size_t fw = std::min<std::size_t>(rng.below(config.max_feature + 1), D);
    const std::size_t f0 = rng.below(D - fw + 1);
    out.block(static_cast<Eigen::Index>(t0), 0, static_cast<Eigen::Index>(tw), features.cols()).setZero();
    out.block(0, static_cast<Eigen::Index>(f0), features.rows(), static_cast<Eigen::Index>(fw)).setZero();
    return out;
}

}  // namespace mtkd
