#include "mtkd/student.hpp"

#include "mtkd/config.hpp"

#include <sstream>

namespace mtkd {

void ModelConfig::validate() const {
    if (input_dim == 0 || encoder_dim == 0 || embed_dim == 0 || pred_embed == 0 ||
        pred_hidden == 0 || joint_dim == 0 || (subsample && subsample_dim == 0)) {
        throw ValidationError("model config: dimensions must be positive");
    }
    if (vocab < 2) throw ValidationError("model config: vocab must be >= 2");
    if (context_past < 0 || context_future < 0) {
        throw ValidationError("model config: context sizes must be >= 0");
    }
    if (streaming && context_future != 0) {
        throw ValidationError("model config: streaming encoder requires context_future = 0");
    }
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
    j = nlohmann::json{{"input_dim", c.input_dim},         {"subsample", c.subsample},
                       {"subsample_dim", c.subsample_dim}, {"encoder_layers", c.encoder_layers},
                       {"encoder_dim", c.encoder_dim},     {"context_past", c.context_past},
                       {"context_future", c.context_future}, {"streaming", c.streaming},
                       {"embed_dim", c.embed_dim},         {"vocab", c.vocab},
                       {"pred_embed", c.pred_embed},       {"pred_hidden", c.pred_hidden},
                       {"joint_dim", c.joint_dim}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
    const std::string where = "model";
    check_keys(j, {"input_dim", "subsample", "subsample_dim", "encoder_layers", "encoder_dim",
                   "context_past", "context_future", "streaming", "embed_dim", "vocab",
                   "pred_embed", "pred_hidden", "joint_dim"},
               where);
    const ModelConfig d;
    c.input_dim = config_value(j, "input_dim", d.input_dim, where);
    c.subsample = config_value(j, "subsample", d.subsample, where);
    c.subsample_dim = config_value(j, "subsample_dim", d.subsample_dim, where);
    c.encoder_layers = config_value(j, "encoder_layers", d.encoder_layers, where);
    c.encoder_dim = config_value(j, "encoder_dim", d.encoder_dim, where);
    c.context_past = config_value(j, "context_past", d.context_past, where);
    c.context_future = config_value(j, "context_future", d.context_future, where);
    c.streaming = config_value(j, "streaming", d.streaming, where);
    c.embed_dim = config_value(j, "embed_dim", d.embed_dim, where);
    c.vocab = config_value(j, "vocab", d.vocab, where);
    c.pred_embed = config_value(j, "pred_embed", d.pred_embed, where);
    c.pred_hidden = config_value(j, "pred_hidden", d.pred_hidden, where);
    c.joint_dim = config_value(j, "joint_dim", d.joint_dim, where);
}

Matrix stack_frame_pairs(const Matrix& features) {
    if (features.rows() < 2) throw ValidationError("subsample: need at least 2 input frames");
    const Eigen::Index T = features.rows() / 2;
    const Eigen::Index d = features.cols();
    Matrix out(T, 2 * d);
    for (Eigen::Index t = 0; t < T; ++t) {
        out.block(t, 0, 1, d) = features.row(2 * t);
        out.block(t, d, 1, d) = features.row(2 * t + 1);
    }
    return out;
}

Encoder::Encoder(const ModelConfig& config) {
    config.validate();
    std::size_t in = config.input_dim;
    if (config.subsample) {
        frontend = Linear(2 * config.input_dim, config.subsample_dim);
        in = config.subsample_dim;
    }
    for (std::size_t l = 0; l < config.encoder_layers; ++l) {
        layers.emplace_back(in, config.encoder_dim, config.context_past, config.effective_future());
        in = config.encoder_dim;
    }
    projection = Linear(in, config.embed_dim);
}

void Encoder::init(Rng& rng) {
    if (frontend) frontend->init(rng);
    for (auto& layer : layers) layer.linear.init(rng);
    projection.init(rng);
}

Matrix Encoder::forward(const Matrix& features, Cache* cache) const {
    const std::size_t expected_in = frontend ? frontend->in_dim() / 2
                                    : layers.empty() ? projection.in_dim()
                                                     : layers.front().in_dim();
    if (static_cast<std::size_t>(features.cols()) != expected_in) {
        std::ostringstream os;
        os << "encoder: feature dimension " << features.cols() << " != " << expected_in;
        throw ShapeError(os.str());
    }
    if (features.rows() < 1) throw ValidationError("encoder: no input frames");
    if (!features.allFinite()) throw ValidationError("encoder: non-finite feature value");

    Matrix h;
    if (frontend) {
        Matrix stacked = stack_frame_pairs(features);
        h = frontend->forward(stacked).array().tanh().matrix();
        if (cache != nullptr) {
            cache->stacked = std::move(stacked);
            cache->frontend_out = h;
        }
    } else {
        h = features;
    }
    if (cache != nullptr) cache->layers.assign(layers.size(), {});
    for (std::size_t l = 0; l < layers.size(); ++l) {
        h = layers[l].forward(h, cache != nullptr ? &cache->layers[l] : nullptr);
    }
    Matrix out = projection.forward(h);
    if (cache != nullptr) cache->last_hidden = std::move(h);
    return out;
}

void Encoder::backward(const Cache& cache, const Matrix& d_embed, Encoder& grads) const {
    Matrix dh = projection.backward(cache.last_hidden, d_embed, grads.projection);
    for (std::size_t l = layers.size(); l-- > 0;) {
        dh = layers[l].backward(cache.layers[l], dh, grads.layers[l]);
    }
    if (frontend) {
        const Matrix dz = (dh.array() * (1.0 - cache.frontend_out.array().square())).matrix();
        frontend->backward(cache.stacked, dz, *grads.frontend);
    }
}

StudentModel::StudentModel(const ModelConfig& config, std::uint64_t seed)
    : config_(config),
      encoder_(config),
      head_(config.embed_dim, config.vocab, config.pred_embed, config.pred_hidden,
            config.joint_dim) {
    Rng rng(seed);
    encoder_.init(rng);
    head_.init(rng);
}

StudentModel StudentModel::zeros_like() const {
    StudentModel out = *this;
    zero_params(out);
    return out;
}

std::size_t StudentModel::output_frames(std::size_t input_frames) const {
    return config_.subsample ? input_frames / 2 : input_frames;
}

Matrix StudentModel::encode(const Matrix& features, Encoder::Cache* cache) const {
    return encoder_.forward(features, cache);
}

DistributionLattice StudentModel::joint_lattice(const Matrix& encoder_out, const LabelSequence& y,
                                                TransducerHead::Cache* cache) const {
    return head_.lattice(encoder_out, y, cache);
}

TransducerTape transducer_forward(const StudentModel& model, const Matrix& features,
                                  const LabelSequence& y) {
    TransducerTape tape;
    tape.encoder_out = model.encode(features, &tape.encoder);
    tape.lattice = model.joint_lattice(tape.encoder_out, y, &tape.head);
    return tape;
}

void transducer_backward(const StudentModel& model, const TransducerTape& tape,
                         std::span<const double> d_logz, StudentModel& grads,
                         const Matrix* d_encoder_out) {
    Matrix d_enc = model.head().backward(tape.head, tape.encoder_out, d_logz, grads.head());
    if (d_encoder_out != nullptr) d_enc += *d_encoder_out;
    model.encoder().backward(tape.encoder, d_enc, grads.encoder());
}

void LossNetBank::add(const std::string& teacher_id, std::size_t student_dim,
                      std::size_t teacher_dim, Rng& rng) {
    for (std::size_t i = 0; i < teacher_ids.size(); ++i) {
        if (teacher_ids[i] == teacher_id) {
            if (nets[i].output_dim() != teacher_dim || nets[i].input_dim() != student_dim) {
                throw ShapeError("lossnet: teacher '" + teacher_id + "' registered with other dims");
            }
            return;
        }
    }
    LossNet net(student_dim, teacher_dim);
    init_uniform(net.weight, student_dim, rng);
    init_uniform(net.bias, student_dim, rng);
    teacher_ids.push_back(teacher_id);
    nets.push_back(std::move(net));
}

std::size_t LossNetBank::index_of(const std::string& teacher_id) const {
    for (std::size_t i = 0; i < teacher_ids.size(); ++i) {
        if (teacher_ids[i] == teacher_id) return i;
    }
    throw ValidationError("lossnet: unknown teacher '" + teacher_id + "'");
}

LossNetBank LossNetBank::zeros_like() const {
    LossNetBank out = *this;
    zero_params(out);
    return out;
}

}  // namespace mtkd
