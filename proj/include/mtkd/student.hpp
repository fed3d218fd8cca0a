#pragma once

#include "mtkd/kd_losses.hpp"
#include "mtkd/nn.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace mtkd {

struct ModelConfig {
    std::size_t input_dim = 8;
    /// Frame-pair concatenation + linear + tanh before the encoder (halves T).
    bool subsample = false;
    std::size_t subsample_dim = 16;
    std::size_t encoder_layers = 2;
    std::size_t encoder_dim = 24;
    int context_past = 2;
    int context_future = 1;
    bool streaming = false;
    std::size_t embed_dim = 16;
    std::size_t vocab = 5;
    std::size_t pred_embed = 8;
    std::size_t pred_hidden = 16;
    std::size_t joint_dim = 24;

    /// Throws ValidationError on inconsistent settings (streaming with future
    /// context, zero dimensions, V < 2).
    void validate() const;
    int effective_future() const { return streaming ? 0 : context_future; }
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

/// Frame-pair concatenation followed by a linear map and tanh; T = floor(M/2).
Matrix stack_frame_pairs(const Matrix& features);

/// Student encoder: optional subsampling frontend, windowed layers, linear
/// projection to the embedding dimension D_S.
struct Encoder {
    std::optional<Linear> frontend;
    std::vector<WindowedLayer> layers;
    Linear projection;

    Encoder() = default;
    explicit Encoder(const ModelConfig& config);

    void init(Rng& rng);

    struct Cache {
        Matrix stacked;
        Matrix frontend_out;
        std::vector<WindowedLayer::Cache> layers;
        Matrix last_hidden;
    };

    Matrix forward(const Matrix& features, Cache* cache = nullptr) const;
    void backward(const Cache& cache, const Matrix& d_embed, Encoder& grads) const;

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        if (frontend) frontend->visit(f, prefix + "frontend.");
        for (std::size_t i = 0; i < layers.size(); ++i) {
            layers[i].visit(f, prefix + "layer" + std::to_string(i) + ".");
        }
        projection.visit(f, prefix + "projection.");
    }
};

/// Trainable transducer: encoder, predictor and joint network.
class StudentModel {
public:
    StudentModel() = default;
    /// Parameters drawn uniformly in +-1/sqrt(fan_in) from `seed`.
    StudentModel(const ModelConfig& config, std::uint64_t seed);

    /// Same structure, all parameters zero (gradient accumulator).
    StudentModel zeros_like() const;

    const ModelConfig& config() const { return config_; }
    Encoder& encoder() { return encoder_; }
    const Encoder& encoder() const { return encoder_; }
    TransducerHead& head() { return head_; }
    const TransducerHead& head() const { return head_; }

    /// Frames after the frontend for an input of `input_frames` frames.
    std::size_t output_frames(std::size_t input_frames) const;

    Matrix encode(const Matrix& features, Encoder::Cache* cache = nullptr) const;
    DistributionLattice joint_lattice(const Matrix& encoder_out, const LabelSequence& y,
                                      TransducerHead::Cache* cache = nullptr) const;

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        encoder_.visit(f, prefix + "encoder.");
        head_.visit(f, prefix);
    }

private:
    ModelConfig config_;
    Encoder encoder_;
    TransducerHead head_;
};

/// Recorded forward pass of a full transducer on one utterance.
struct TransducerTape {
    Encoder::Cache encoder;
    TransducerHead::Cache head;
    Matrix encoder_out;
    DistributionLattice lattice;
};

TransducerTape transducer_forward(const StudentModel& model, const Matrix& features,
                                  const LabelSequence& y);

/// Backpropagates d loss / d lattice log-values (plus an optional direct
/// gradient on the encoder output) into `grads`.
void transducer_backward(const StudentModel& model, const TransducerTape& tape,
                         std::span<const double> d_logz, StudentModel& grads,
                         const Matrix* d_encoder_out = nullptr);

/// A set of LossNets, one per distinct teacher id.
struct LossNetBank {
    std::vector<std::string> teacher_ids;
    std::vector<LossNet> nets;

    void add(const std::string& teacher_id, std::size_t student_dim, std::size_t teacher_dim,
             Rng& rng);
    std::size_t index_of(const std::string& teacher_id) const;
    LossNetBank zeros_like() const;

    template <class F>
    void visit(F&& f, const std::string& prefix) {
        for (std::size_t i = 0; i < nets.size(); ++i) {
            nets[i].visit(f, prefix + "lossnet." + teacher_ids[i] + ".");
        }
    }
};

}  // namespace mtkd
