#pragma once

#include "mtkd/common.hpp"
#include "mtkd/config.hpp"
#include "mtkd/lattice.hpp"
#include "mtkd/random.hpp"

#include <nlohmann/json.hpp>

#include <string>
#include <vector>

namespace mtkd {

/// Hidden ground truth of the synthetic task.
///
/// Class 0 is silence, classes 1..V-1 are tokens. A token is emitted as one
/// onset frame carrying its prototype followed by 1-3 silence frames. The
/// first half of a prototype encodes the token's group (k-1)/m and the second
/// half its position (k-1)%m within the group, m = ceil(sqrt(V-1)), so each
/// half alone only identifies the token up to that factor.
struct TaskConfig {
    std::uint64_t seed = 1;
    std::size_t input_dim = 8;
    std::size_t vocab = 5;
    double noise = 0.5;
    double amplitude = 1.5;
    std::size_t min_frames = 8;
    std::size_t max_frames = 24;

    void validate() const;
    std::size_t group_size() const;
};

void to_json(nlohmann::json& j, const TaskConfig& c);
void from_json(const nlohmann::json& j, TaskConfig& c);

struct Utterance {
    std::string id;
    Matrix features;  // T x input_dim
    LabelSequence tokens;
};

class SyntheticTask {
public:
    explicit SyntheticTask(const TaskConfig& config);

    const TaskConfig& config() const { return config_; }
    /// V x input_dim, row 0 (silence) is zero.
    const Matrix& prototypes() const { return prototypes_; }

    /// Deterministic in (task seed, split name, index).
    Utterance utterance(const std::string& split, std::size_t index) const;
    std::vector<Utterance> split(const std::string& name, std::size_t count) const;

private:
    TaskConfig config_;
    Matrix prototypes_;
};

/// Zeroes one random run of frames and one random band of feature dimensions,
/// each of width uniform in [0, max].
struct MaskConfig {
    bool enabled = false;
    std::size_t max_time = 3;
    std::size_t max_feature = 2;
};

void to_json(nlohmann::json& j, const MaskConfig& c);
void from_json(const nlohmann::json& j, MaskConfig& c);

/// Returns `features` unchanged, drawing nothing, when disabled.
Matrix apply_mask(const Matrix& features, const MaskConfig& config, Rng& rng);

}  // namespace mtkd
