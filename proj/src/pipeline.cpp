#include "mtkd/pipeline.hpp"

#include "mtkd/config.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mtkd {
namespace {

double lerp(double a, double b, double f) { return a * (1.0 - f) + b * f; }

std::string distance_name(Distance d) { return d == Distance::L1 ? "l1" : "l2"; }

Distance parse_distance(const std::string& name) {
    if (name == "l1" || name == "L1") return Distance::L1;
    if (name == "l2" || name == "L2") return Distance::L2;
    throw ConfigError("unknown distance '" + name + "' (expected l1 or l2)");
}

std::string map_name(SimilarityMap m) { return m == SimilarityMap::shifted ? "shifted" : "clipped"; }

SimilarityMap parse_map(const std::string& name) {
    if (name == "shifted") return SimilarityMap::shifted;
    if (name == "clipped") return SimilarityMap::clipped;
    throw ConfigError("unknown similarity_map '" + name + "' (expected shifted or clipped)");
}

template <class Model>
void scale_params(Model& model, double factor) {
    for (auto& v : param_views(model)) {
        for (double& x : v.values) x *= factor;
    }
}

std::size_t batches_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

}  // namespace

// ---- learning-rate schedules ---------------------------------------------------

void LrSchedule::validate() const {
    if (!(initial > 0.0 && peak > 0.0 && final_lr > 0.0)) {
        throw ValidationError("lr schedule: all rates must be > 0");
    }
    if (total_steps == 0) throw ValidationError("lr schedule: total_steps must be > 0");
    if (!(warmup >= 0.0 && hold >= 0.0 && decay > 0.0) ||
        std::abs(warmup + hold + decay - 1.0) > 1e-12) {
        throw ValidationError("lr schedule: phase fractions must be >= 0 and sum to 1");
    }
}

LrSchedule lr_schedule_100h(std::size_t total_steps) {
    return LrSchedule{1e-6, 1e-4, 5e-6, total_steps, 0.10, 0.40, 0.50};
}

LrSchedule lr_schedule_960h(std::size_t total_steps) {
    return LrSchedule{1e-6, 5e-4, 1e-5, total_steps, 0.10, 0.40, 0.50};
}

double tri_stage_piece(LrPhase phase, double position, const LrSchedule& s) {
    const double total = static_cast<double>(s.total_steps);
    const double warmup_end = s.warmup * total;
    const double hold_end = (s.warmup + s.hold) * total;
    switch (phase) {
        case LrPhase::warmup:
            return warmup_end > 0.0 ? lerp(s.initial, s.peak, position / warmup_end) : s.peak;
        case LrPhase::hold: return s.peak;
        case LrPhase::decay: return lerp(s.peak, s.final_lr, (position - hold_end) / (total - hold_end));
    }
    return s.peak;
}

double tri_stage_lr(std::size_t step, const LrSchedule& s) {
    s.validate();
    if (step > s.total_steps) {
        std::ostringstream os;
        os << "lr schedule: step " << step << " outside [0, " << s.total_steps << "]";
        throw PreconditionError(os.str());
    }
    const double total = static_cast<double>(s.total_steps);
    const double position = static_cast<double>(step);
    if (position < s.warmup * total) return tri_stage_piece(LrPhase::warmup, position, s);
    if (position <= (s.warmup + s.hold) * total) return tri_stage_piece(LrPhase::hold, position, s);
    return tri_stage_piece(LrPhase::decay, position, s);
}

double noam_lr(std::size_t step, double peak, std::size_t warmup_steps) {
    const double s = static_cast<double>(step + 1);
    const double w = static_cast<double>(std::max<std::size_t>(warmup_steps, 1));
    return peak * std::min(s / w, std::sqrt(w / s));
}

std::string metrics_to_jsonl(const std::vector<MetricRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

// ---- stage 1 ---------------------------------------------------------------------

void PretrainPlan::validate() const {
    if (epochs == 0 || batch_size == 0) throw ValidationError("pretrain: epochs and batch_size must be > 0");
    if (!(lr > 0.0)) throw ValidationError("pretrain: lr must be > 0");
    if (clip_norm < 0.0) throw ValidationError("pretrain: clip_norm must be >= 0");
}

void to_json(nlohmann::json& j, const PretrainPlan& p) {
    j = nlohmann::json{{"epochs", p.epochs},
                       {"batch_size", p.batch_size},
                       {"lr", p.lr},
                       {"warmup_steps", p.warmup_steps},
                       {"optimizer", to_string(p.optimizer)},
                       {"sampling", to_string(p.sampling)},
                       {"similarity_map", map_name(p.similarity_map)},
                       {"distance", distance_name(p.distance)},
                       {"tau", p.tau},
                       {"clip_norm", p.clip_norm},
                       {"seed", p.seed},
                       {"masking", p.masking}};
}

void from_json(const nlohmann::json& j, PretrainPlan& p) {
    const std::string where = "pretrain";
    check_keys(j, {"epochs", "batch_size", "lr", "warmup_steps", "optimizer", "sampling",
                   "similarity_map", "distance", "tau", "clip_norm", "seed", "masking"},
               where);
    const PretrainPlan d;
    p.epochs = config_value(j, "epochs", d.epochs, where);
    p.batch_size = config_value(j, "batch_size", d.batch_size, where);
    p.lr = config_value(j, "lr", d.lr, where);
    p.warmup_steps = config_value(j, "warmup_steps", d.warmup_steps, where);
    p.optimizer = parse_optimizer(config_value(j, "optimizer", to_string(d.optimizer), where));
    p.sampling = parse_sampling(config_value(j, "sampling", to_string(d.sampling), where));
    p.similarity_map = parse_map(config_value(j, "similarity_map", map_name(d.similarity_map), where));
    p.distance = parse_distance(config_value(j, "distance", distance_name(d.distance), where));
    p.tau = config_value(j, "tau", d.tau, where);
    p.clip_norm = config_value(j, "clip_norm", d.clip_norm, where);
    p.seed = config_value(j, "seed", d.seed, where);
    p.masking = j.contains("masking") ? j.at("masking").get<MaskConfig>() : d.masking;
}

void EmbeddingData::validate() const {
    if (features.empty()) throw ValidationError("embedding data: no utterances");
    if (teachers.empty()) throw ValidationError("embedding data: no teachers");
    if (embeddings.size() != teachers.size()) {
        throw ShapeError("embedding data: one embedding list per teacher expected");
    }
    for (std::size_t n = 0; n < teachers.size(); ++n) {
        if (embeddings[n].size() != features.size()) {
            throw ShapeError("embedding data: teacher '" + teachers[n].id + "' misses utterances");
        }
        for (const auto& e : embeddings[n]) {
            if (static_cast<std::size_t>(e.cols()) != teachers[n].embed_dim) {
                throw ShapeError("embedding data: teacher '" + teachers[n].id +
                                 "' embedding dimension differs from its declared D");
            }
        }
    }
}

EmbeddingData embed_with_teachers(const std::vector<const Teacher*>& teachers,
                                  const std::vector<Utterance>& utterances) {
    EmbeddingData data;
    for (const auto& utt : utterances) data.features.push_back(utt.features);
    for (const Teacher* t : teachers) {
        data.teachers.push_back({t->id(), t->embed_dim(), t->dev_wer});
        std::vector<Matrix> rows;
        for (const auto& utt : utterances) rows.push_back(t->embed(utt.features));
        data.embeddings.push_back(std::move(rows));
    }
    return data;
}

std::vector<double> dev_l1_per_teacher(const StudentModel& model, const LossNetBank& lossnets,
                                       const EmbeddingData& dev, std::size_t tau) {
    std::vector<Matrix> encoded;
    encoded.reserve(dev.features.size());
    for (const auto& f : dev.features) encoded.push_back(model.encode(f));
    std::vector<double> out;
    for (std::size_t n = 0; n < dev.teachers.size(); ++n) {
        const LossNet& net = lossnets.nets[lossnets.index_of(dev.teachers[n].id)];
        double sum = 0.0;
        for (std::size_t i = 0; i < encoded.size(); ++i) {
            sum += embedding_l1(encoded[i], dev.embeddings[n][i], net, tau);
        }
        out.push_back(sum / static_cast<double>(encoded.size()));
    }
    return out;
}

namespace {

double mean(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

std::vector<double> fixed_probs(SamplingKind kind, const std::vector<TeacherInfo>& teachers) {
    if (kind == SamplingKind::uniform) return uniform_probs(teachers.size());
    std::vector<double> wers;
    for (const auto& t : teachers) {
        if (!t.dev_wer) throw PreconditionError("wer sampling: teacher '" + t.id + "' has no dev WER");
        wers.push_back(*t.dev_wer);
    }
    return wer_probs(wers);
}

}  // namespace

PretrainResult pretrain_encoder(const ModelConfig& config, const PretrainPlan& plan,
                                const EmbeddingData& train, const EmbeddingData& dev) {
    plan.validate();
    train.validate();
    dev.validate();
    if (dev.teachers.size() != train.teachers.size()) {
        throw ShapeError("pretrain: train and dev teacher lists differ");
    }
    const std::size_t N = train.teachers.size();
    std::vector<double> probs;
    if (plan.sampling != SamplingKind::similarity_based) probs = fixed_probs(plan.sampling, train.teachers);

    PretrainResult result;
    StudentModel model(config, plan.seed);
    Rng rng(plan.seed);
    Rng lossnet_rng = rng.split();
    LossNetBank lossnets;
    for (const auto& t : train.teachers) lossnets.add(t.id, config.embed_dim, t.embed_dim, lossnet_rng);

    Optimizer encoder_opt(plan.optimizer);
    Optimizer lossnet_opt(plan.optimizer);
    result.teacher_draws.assign(N, 0);

    auto record_dev = [&](std::size_t epoch, std::size_t step) {
        auto per_teacher = dev_l1_per_teacher(model, lossnets, dev, plan.tau);
        const double avg = mean(per_teacher);
        result.dev_l1.push_back(avg);
        result.dev_l1_per_teacher.push_back(per_teacher);
        MetricRecord r;
        r["stage"] = "pretrain";
        r["kind"] = "dev";
        r["epoch"] = epoch;
        r["step"] = step;
        r["dev_l1"] = avg;
        r["dev_l1_per_teacher"] = per_teacher;
        result.metrics.push_back(std::move(r));
        if (epoch == 0 || avg < result.dev_l1[result.best_epoch]) {
            result.best_epoch = epoch;
            result.model = model;
            result.lossnets = lossnets;
        }
    };

    record_dev(0, 0);
    std::size_t step = 0;
    const std::size_t n_utts = train.features.size();
    for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
        const auto order = rng.permutation(n_utts);
        for (std::size_t b0 = 0; b0 < n_utts; b0 += plan.batch_size) {
            const std::size_t b1 = std::min(n_utts, b0 + plan.batch_size);
            if (plan.sampling == SamplingKind::similarity_based) {
                std::vector<Matrix> projected(N), teacher_rows(N);
                for (std::size_t n = 0; n < N; ++n) {
                    const LossNet& net = lossnets.nets[lossnets.index_of(train.teachers[n].id)];
                    std::vector<Matrix> parts_s, parts_t;
                    Eigen::Index rows = 0;
                    for (std::size_t k = b0; k < b1; ++k) {
                        parts_s.push_back(net.apply(model.encode(train.features[order[k]])));
                        parts_t.push_back(train.embeddings[n][order[k]]);
                        rows += parts_s.back().rows();
                    }
                    projected[n].resize(rows, parts_s[0].cols());
                    teacher_rows[n].resize(rows, parts_t[0].cols());
                    Eigen::Index r = 0;
                    for (std::size_t k = 0; k < parts_s.size(); ++k) {
                        projected[n].middleRows(r, parts_s[k].rows()) = parts_s[k];
                        teacher_rows[n].middleRows(r, parts_t[k].rows()) = parts_t[k];
                        r += parts_s[k].rows();
                    }
                }
                probs = similarity_probs(projected, teacher_rows, plan.similarity_map).probs;
            }

            StudentModel grads = model.zeros_like();
            LossNetBank net_grads = lossnets.zeros_like();
            double batch_loss = 0.0;
            for (std::size_t k = b0; k < b1; ++k) {
                const std::size_t i = order[k];
                const std::size_t n = sample_teacher(probs, rng);
                ++result.teacher_draws[n];
                const Matrix features = apply_mask(train.features[i], plan.masking, rng);
                Encoder::Cache cache;
                const Matrix student = model.encoder().forward(features, &cache);
                const std::size_t net_index = lossnets.index_of(train.teachers[n].id);
                const auto kd = embedding_kd(student, train.embeddings[n][i], lossnets.nets[net_index],
                                             plan.distance, plan.tau);
                batch_loss += kd.value;
                model.encoder().backward(cache, kd.grad_student, grads.encoder());
                net_grads.nets[net_index].weight += kd.grad_weight;
                net_grads.nets[net_index].bias += kd.grad_bias;
            }
            const double inv = 1.0 / static_cast<double>(b1 - b0);
            scale_params(grads.encoder(), inv);
            scale_params(net_grads, inv);
            clip_grad_norm(grads.encoder(), plan.clip_norm);
            clip_grad_norm(net_grads, plan.clip_norm);
            const double lr = noam_lr(step, plan.lr, plan.warmup_steps);
            encoder_opt.step(model.encoder(), grads.encoder(), lr);
            lossnet_opt.step(lossnets, net_grads, lr);

            result.step_losses.push_back(batch_loss * inv);
            MetricRecord r;
            r["stage"] = "pretrain";
            r["kind"] = "step";
            r["epoch"] = epoch;
            r["step"] = step;
            r["loss"] = batch_loss * inv;
            r["lr"] = lr;
            result.metrics.push_back(std::move(r));
            ++step;
        }
        record_dev(epoch, step);
    }
    return result;
}

// ---- stage 2 ---------------------------------------------------------------------

void FinetunePlan::validate() const {
    if (epochs == 0 || batch_size == 0) throw ValidationError("finetune: epochs and batch_size must be > 0");
    if (!(initial_lr > 0.0 && peak_lr > 0.0 && final_lr > 0.0)) {
        throw ValidationError("finetune: learning rates must be > 0");
    }
    if (!(lambda >= 0.0)) throw PreconditionError("finetune: lambda must be >= 0");
    if (beam < 1) throw PreconditionError("finetune: beam must be >= 1");
    if (clip_norm < 0.0) throw ValidationError("finetune: clip_norm must be >= 0");
    if (!omegas.empty()) validate_omegas(omegas);
}

void to_json(nlohmann::json& j, const FinetunePlan& p) {
    j = nlohmann::json{{"epochs", p.epochs},
                       {"batch_size", p.batch_size},
                       {"initial_lr", p.initial_lr},
                       {"peak_lr", p.peak_lr},
                       {"final_lr", p.final_lr},
                       {"optimizer", to_string(p.optimizer)},
                       {"lambda", p.lambda},
                       {"tau", p.tau},
                       {"omegas", p.omegas},
                       {"clip_norm", p.clip_norm},
                       {"seed", p.seed},
                       {"beam", p.beam},
                       {"masking", p.masking}};
}

void from_json(const nlohmann::json& j, FinetunePlan& p) {
    const std::string where = "finetune";
    check_keys(j, {"epochs", "batch_size", "initial_lr", "peak_lr", "final_lr", "optimizer", "lambda",
                   "tau", "omegas", "clip_norm", "seed", "beam", "masking"},
               where);
    const FinetunePlan d;
    p.epochs = config_value(j, "epochs", d.epochs, where);
    p.batch_size = config_value(j, "batch_size", d.batch_size, where);
    p.initial_lr = config_value(j, "initial_lr", d.initial_lr, where);
    p.peak_lr = config_value(j, "peak_lr", d.peak_lr, where);
    p.final_lr = config_value(j, "final_lr", d.final_lr, where);
    p.optimizer = parse_optimizer(config_value(j, "optimizer", to_string(d.optimizer), where));
    p.lambda = config_value(j, "lambda", d.lambda, where);
    p.tau = config_value(j, "tau", d.tau, where);
    p.omegas = config_value(j, "omegas", d.omegas, where);
    p.clip_norm = config_value(j, "clip_norm", d.clip_norm, where);
    p.seed = config_value(j, "seed", d.seed, where);
    p.beam = config_value(j, "beam", d.beam, where);
    p.masking = j.contains("masking") ? j.at("masking").get<MaskConfig>() : d.masking;
}

void LabeledData::validate() const {
    if (features.empty()) throw ValidationError("labeled data: no utterances");
    if (features.size() != tokens.size()) throw ShapeError("labeled data: feature and token counts differ");
}

LabeledData labeled_from(const std::vector<Utterance>& utterances) {
    LabeledData out;
    for (const auto& u : utterances) {
        out.features.push_back(u.features);
        out.tokens.push_back(u.tokens);
    }
    return out;
}

PathTargets extract_path_targets(const std::vector<const Teacher*>& teachers,
                                 const std::vector<Utterance>& utterances) {
    PathTargets out;
    for (const Teacher* t : teachers) {
        out.teacher_ids.push_back(t->id());
        std::vector<std::vector<PathNodeTarget>> per_utt;
        for (const auto& u : utterances) {
            const auto labels = teacher_labels(*t, u.features, u.tokens);
            per_utt.push_back(path_targets(labels.lattice, labels.one_best));
        }
        out.targets.push_back(std::move(per_utt));
    }
    return out;
}

EvalReport evaluate(const StudentModel& model, const LabeledData& data, int beam) {
    data.validate();
    EvalReport report;
    for (const auto& f : data.features) {
        report.hypotheses.push_back(beam_search_decode(model.encode(f), model.head(), beam).tokens);
    }
    report.ter = token_error_rate(report.hypotheses, data.tokens);
    return report;
}

FinetuneResult finetune(const ModelConfig& config, const FinetunePlan& plan, const LabeledData& train,
                        const Encoder* encoder_init, const PathTargets* targets,
                        const LabeledData* eval) {
    plan.validate();
    train.validate();
    const bool use_kd = plan.lambda > 0.0;
    std::vector<double> omegas;
    if (use_kd) {
        if (targets == nullptr || targets->targets.empty()) {
            throw PreconditionError("finetune: lambda > 0 requires 1-best targets");
        }
        const std::size_t N = targets->targets.size();
        omegas = plan.omegas.empty() ? uniform_probs(N) : plan.omegas;
        if (omegas.size() != N) throw ShapeError("finetune: omega count differs from teacher count");
        for (const auto& per_teacher : targets->targets) {
            if (per_teacher.size() != train.features.size()) {
                throw ShapeError("finetune: 1-best targets do not cover the training set");
            }
        }
    }

    FinetuneResult result;
    result.model = StudentModel(config, plan.seed);
    StudentModel& model = result.model;
    if (encoder_init != nullptr) {
        auto dst = param_views(model.encoder());
        auto src = param_views(const_cast<Encoder&>(*encoder_init));
        if (dst.size() != src.size()) throw ShapeError("finetune: encoder init has a different structure");
        for (std::size_t b = 0; b < dst.size(); ++b) {
            if (dst[b].rows != src[b].rows || dst[b].cols != src[b].cols) {
                throw ShapeError("finetune: encoder init block '" + dst[b].name + "' has another shape");
            }
            std::copy(src[b].values.begin(), src[b].values.end(), dst[b].values.begin());
        }
    }

    Rng rng(plan.seed ^ 0x5eedf00dULL);
    const std::size_t n_utts = train.features.size();
    const std::size_t total = plan.epochs * batches_per_epoch(n_utts, plan.batch_size);
    const LrSchedule schedule{plan.initial_lr, plan.peak_lr, plan.final_lr, total, 0.10, 0.40, 0.50};
    Optimizer opt(plan.optimizer);

    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= plan.epochs; ++epoch) {
        const auto order = rng.permutation(n_utts);
        for (std::size_t b0 = 0; b0 < n_utts; b0 += plan.batch_size) {
            const std::size_t b1 = std::min(n_utts, b0 + plan.batch_size);
            StudentModel grads = model.zeros_like();
            double batch_loss = 0.0;
            for (std::size_t k = b0; k < b1; ++k) {
                const std::size_t i = order[k];
                const Matrix features = apply_mask(train.features[i], plan.masking, rng);
                const auto tape = transducer_forward(model, features, train.tokens[i]);
                auto loss = rnnt_loss(tape.lattice, train.tokens[i]);
                double nbest = 0.0;
                if (use_kd) {
                    std::vector<double> per_teacher;
                    // weighted teacher sum first, then lambda; two identical teachers at 1/2
                    // then give exactly the single-teacher gradient
                    std::vector<double> kd_grad(loss.grad.size(), 0.0);
                    for (std::size_t n = 0; n < omegas.size(); ++n) {
                        const auto kd = one_best_kd(targets->targets[n][i], tape.lattice, plan.tau);
                        per_teacher.push_back(kd.value);
                        for (std::size_t g = 0; g < kd_grad.size(); ++g) kd_grad[g] += omegas[n] * kd.grad[g];
                    }
                    for (std::size_t g = 0; g < kd_grad.size(); ++g) loss.grad[g] += plan.lambda * kd_grad[g];
                    nbest = nbest_kd(per_teacher, omegas);
                }
                batch_loss += final_loss(loss.value, nbest, plan.lambda);
                transducer_backward(model, tape, loss.grad, grads);
            }
            const double inv = 1.0 / static_cast<double>(b1 - b0);
            scale_params(grads, inv);
            clip_grad_norm(grads, plan.clip_norm);
            const double lr = tri_stage_lr(step, schedule);
            opt.step(model, grads, lr);

            result.step_losses.push_back(batch_loss * inv);
            MetricRecord r;
            r["stage"] = "finetune";
            r["kind"] = "step";
            r["epoch"] = epoch;
            r["step"] = step;
            r["loss"] = batch_loss * inv;
            r["lr"] = lr;
            result.metrics.push_back(std::move(r));
            ++step;
        }
    }
    if (eval != nullptr) {
        result.report = evaluate(model, *eval, plan.beam);
        MetricRecord r;
        r["stage"] = "finetune";
        r["kind"] = "eval";
        r["epoch"] = plan.epochs;
        r["step"] = step;
        r["ter"] = result.report->ter;
        result.metrics.push_back(std::move(r));
    }
    return result;
}

}  // namespace mtkd
