#include "mtkd/commands.hpp"

#include "mtkd/config.hpp"
#include "mtkd/decode.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace mtkd::commands {
namespace {

void require_split_name(const std::string& name, const char* what) {
    if (name.empty()) throw ConfigError(std::string(what) + ": split name must not be empty");
    if (name.find_first_of("/\\#.") != std::string::npos) {
        throw ConfigError(std::string(what) + ": split name '" + name + "' may not contain / \\ # or .");
    }
}

void require_file(const fs::path& path) {
    if (!fs::is_regular_file(path)) throw MissingInputError("missing input '" + path.string() + "'");
}

void prepare_out(const fs::path& out, const nlohmann::json& config) {
    fs::create_directories(out);
    write_json(out / "config.json", config);
}

TaskConfig read_task(const fs::path& data) {
    require_file(data / "task.json");
    return read_json(data / "task.json").get<TaskConfig>();
}

void check_split(const fs::path& data, const std::string& split) {
    require_file(data / (split + ".jsonl"));
    require_file(data / (split + ".features.tkde"));
}

void check_model_fits(const ModelConfig& model, const TaskConfig& task) {
    if (model.input_dim != task.input_dim || model.vocab != task.vocab) {
        std::ostringstream os;
        os << "model: input_dim/vocab " << model.input_dim << "/" << model.vocab << " do not match the data ("
           << task.input_dim << "/" << task.vocab << ")";
        throw ConfigError(os.str());
    }
}

// ---- labels directory ------------------------------------------------------------

struct LabelsIndex {
    TaskConfig task;
    std::vector<TeacherInfo> teachers;
};

LabelsIndex read_labels_index(const fs::path& labels) {
    require_file(labels / "labels.json");
    const auto j = read_json(labels / "labels.json");
    LabelsIndex index;
    index.task = j.at("task").get<TaskConfig>();
    for (const auto& t : j.at("teachers")) {
        TeacherInfo info;
        info.id = t.at("id").get<std::string>();
        info.embed_dim = t.at("embed_dim").get<std::size_t>();
        if (!t.at("dev_wer").is_null()) info.dev_wer = t.at("dev_wer").get<double>();
        index.teachers.push_back(info);
    }
    return index;
}

std::vector<TeacherInfo> select_teachers(const LabelsIndex& index, const std::vector<std::string>& ids) {
    if (ids.empty()) return index.teachers;
    std::vector<TeacherInfo> out;
    for (const auto& id : ids) {
        auto it = std::find_if(index.teachers.begin(), index.teachers.end(),
                               [&](const TeacherInfo& t) { return t.id == id; });
        if (it == index.teachers.end()) throw ConfigError("teacher '" + id + "' has no extracted labels");
        out.push_back(*it);
    }
    return out;
}

fs::path embedding_path(const fs::path& labels, const std::string& id, const std::string& split) {
    return labels / (id + "." + split + ".tkde");
}

fs::path paths_path(const fs::path& labels, const std::string& id, const std::string& split) {
    return labels / (id + "." + split + ".paths.tkde");
}

EmbeddingData load_embedding_data(const fs::path& data, const fs::path& labels, const std::string& split,
                                  const std::vector<TeacherInfo>& teachers, std::size_t vocab) {
    const auto utts = read_split(data, split, vocab);
    EmbeddingData out;
    for (const auto& u : utts) out.features.push_back(u.features);
    out.teachers = teachers;
    for (const auto& t : teachers) {
        const auto archive =
            read_archive(embedding_path(labels, t.id, split), static_cast<std::uint32_t>(t.embed_dim));
        std::vector<Matrix> per_utt;
        for (const auto& u : utts) per_utt.push_back(archive.at(u.id).values);
        out.embeddings.push_back(std::move(per_utt));
    }
    out.validate();
    return out;
}

PathTargets load_path_targets(const fs::path& labels, const std::string& split,
                              const std::vector<TeacherInfo>& teachers, const std::vector<Utterance>& utts,
                              std::size_t vocab) {
    std::vector<std::string> keys;
    for (const auto& u : utts) keys.push_back(u.id);
    PathTargets out;
    for (const auto& t : teachers) {
        const auto archive = read_archive(paths_path(labels, t.id, split), static_cast<std::uint32_t>(2 + vocab));
        out.teacher_ids.push_back(t.id);
        out.targets.push_back(decode_path_targets(archive, keys, vocab));
    }
    return out;
}

void check_labels(const fs::path& labels, const std::vector<TeacherInfo>& teachers,
                  const std::vector<std::string>& splits, bool paths) {
    for (const auto& t : teachers) {
        for (const auto& s : splits) require_file(paths ? paths_path(labels, t.id, s) : embedding_path(labels, t.id, s));
    }
}

std::string format_ter(double ter) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2) << ter;
    return os.str();
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

// ---- configs -----------------------------------------------------------------------

void GenDataConfig::validate() const {
    task.validate();
    if (unlabeled == 0 || dev == 0 || train == 0 || test == 0) {
        throw ConfigError("gen-data: every split needs at least one utterance");
    }
}

void to_json(nlohmann::json& j, const GenDataConfig& c) {
    j = nlohmann::json{{"task", c.task}, {"unlabeled", c.unlabeled}, {"dev", c.dev}, {"train", c.train}, {"test", c.test}};
}

void from_json(const nlohmann::json& j, GenDataConfig& c) {
    const std::string where = "gen-data";
    check_keys(j, {"task", "unlabeled", "dev", "train", "test"}, where);
    const GenDataConfig d;
    c.task = config_value(j, "task", d.task, where);
    c.unlabeled = config_value(j, "unlabeled", d.unlabeled, where);
    c.dev = config_value(j, "dev", d.dev, where);
    c.train = config_value(j, "train", d.train, where);
    c.test = config_value(j, "test", d.test, where);
}

void GenTeachersConfig::validate() const {
    require_split_name(dev_split, "gen-teachers dev_split");
    if (dev_beam < 1) throw ConfigError("gen-teachers: dev_beam must be >= 1");
    for (std::size_t a = 0; a < teachers.size(); ++a) {
        for (std::size_t b = a + 1; b < teachers.size(); ++b) {
            if (teachers[a].id == teachers[b].id) throw ConfigError("gen-teachers: duplicate id '" + teachers[a].id + "'");
        }
    }
}

void to_json(nlohmann::json& j, const GenTeachersConfig& c) {
    j = nlohmann::json{{"teachers", c.teachers}, {"dev_split", c.dev_split}, {"dev_beam", c.dev_beam}};
}

void from_json(const nlohmann::json& j, GenTeachersConfig& c) {
    const std::string where = "gen-teachers";
    check_keys(j, {"teachers", "dev_split", "dev_beam"}, where);
    const GenTeachersConfig d;
    c.teachers = config_value(j, "teachers", d.teachers, where);
    c.dev_split = config_value(j, "dev_split", d.dev_split, where);
    c.dev_beam = config_value(j, "dev_beam", d.dev_beam, where);
}

void ExtractLabelsConfig::validate() const {
    if (embed_splits.empty()) throw ConfigError("extract-labels: embed_splits is empty");
    for (const auto& s : embed_splits) require_split_name(s, "extract-labels embed_splits");
    if (!path_split.empty()) require_split_name(path_split, "extract-labels path_split");
    if (!pseudo_split.empty()) require_split_name(pseudo_split, "extract-labels pseudo_split");
    if (pseudo_beam < 1) throw ConfigError("extract-labels: pseudo_beam must be >= 1");
}

void to_json(nlohmann::json& j, const ExtractLabelsConfig& c) {
    j = nlohmann::json{{"teachers", c.teachers},       {"embed_splits", c.embed_splits},
                       {"path_split", c.path_split},   {"pseudo_split", c.pseudo_split},
                       {"pseudo_beam", c.pseudo_beam}};
}

void from_json(const nlohmann::json& j, ExtractLabelsConfig& c) {
    const std::string where = "extract-labels";
    check_keys(j, {"teachers", "embed_splits", "path_split", "pseudo_split", "pseudo_beam"}, where);
    const ExtractLabelsConfig d;
    c.teachers = config_value(j, "teachers", d.teachers, where);
    c.embed_splits = config_value(j, "embed_splits", d.embed_splits, where);
    c.path_split = config_value(j, "path_split", d.path_split, where);
    c.pseudo_split = config_value(j, "pseudo_split", d.pseudo_split, where);
    c.pseudo_beam = config_value(j, "pseudo_beam", d.pseudo_beam, where);
}

void PretrainConfig::validate() const {
    model.validate();
    plan.validate();
    require_split_name(train_split, "pretrain train_split");
    require_split_name(dev_split, "pretrain dev_split");
}

void to_json(nlohmann::json& j, const PretrainConfig& c) {
    j = nlohmann::json{{"model", c.model},
                       {"plan", c.plan},
                       {"teachers", c.teachers},
                       {"train_split", c.train_split},
                       {"dev_split", c.dev_split}};
}

void from_json(const nlohmann::json& j, PretrainConfig& c) {
    const std::string where = "pretrain";
    check_keys(j, {"model", "plan", "teachers", "train_split", "dev_split"}, where);
    const PretrainConfig d;
    c.model = config_value(j, "model", d.model, where);
    c.plan = config_value(j, "plan", d.plan, where);
    c.teachers = config_value(j, "teachers", d.teachers, where);
    c.train_split = config_value(j, "train_split", d.train_split, where);
    c.dev_split = config_value(j, "dev_split", d.dev_split, where);
}

void FinetuneConfig::validate() const {
    model.validate();
    plan.validate();
    require_split_name(train_split, "finetune train_split");
    if (!eval_split.empty()) require_split_name(eval_split, "finetune eval_split");
    if (!plan.omegas.empty() && !teachers.empty() && plan.omegas.size() != teachers.size()) {
        throw ConfigError("finetune: omegas and teachers differ in length");
    }
}

void to_json(nlohmann::json& j, const FinetuneConfig& c) {
    j = nlohmann::json{{"model", c.model},
                       {"plan", c.plan},
                       {"teachers", c.teachers},
                       {"train_split", c.train_split},
                       {"eval_split", c.eval_split}};
}

void from_json(const nlohmann::json& j, FinetuneConfig& c) {
    const std::string where = "finetune";
    check_keys(j, {"model", "plan", "teachers", "train_split", "eval_split"}, where);
    const FinetuneConfig d;
    c.model = config_value(j, "model", d.model, where);
    c.plan = config_value(j, "plan", d.plan, where);
    c.teachers = config_value(j, "teachers", d.teachers, where);
    c.train_split = config_value(j, "train_split", d.train_split, where);
    c.eval_split = config_value(j, "eval_split", d.eval_split, where);
}

void DecodeConfig::validate() const {
    require_split_name(split, "decode split");
    if (beam < 1) throw ConfigError("decode: beam must be >= 1");
}

void to_json(nlohmann::json& j, const DecodeConfig& c) { j = nlohmann::json{{"split", c.split}, {"beam", c.beam}}; }

void from_json(const nlohmann::json& j, DecodeConfig& c) {
    const std::string where = "decode";
    check_keys(j, {"split", "beam"}, where);
    const DecodeConfig d;
    c.split = config_value(j, "split", d.split, where);
    c.beam = config_value(j, "beam", d.beam, where);
}

void AblateConfig::validate() const {
    model.validate();
    pretrain.validate();
    finetune.validate();
    if (strategies.empty()) throw ConfigError("ablate-sampling: no strategies");
    if (seeds.empty()) throw ConfigError("ablate-sampling: no seeds");
    for (const auto* s : {&train_split, &dev_split, &finetune_split, &eval_split}) {
        require_split_name(*s, "ablate-sampling split");
    }
}

void to_json(nlohmann::json& j, const AblateConfig& c) {
    std::vector<std::string> strategies;
    for (auto s : c.strategies) strategies.push_back(to_string(s));
    j = nlohmann::json{{"model", c.model},
                       {"pretrain", c.pretrain},
                       {"finetune", c.finetune},
                       {"teachers", c.teachers},
                       {"strategies", strategies},
                       {"seeds", c.seeds},
                       {"train_split", c.train_split},
                       {"dev_split", c.dev_split},
                       {"finetune_split", c.finetune_split},
                       {"eval_split", c.eval_split}};
}

void from_json(const nlohmann::json& j, AblateConfig& c) {
    const std::string where = "ablate-sampling";
    check_keys(j,
               {"model", "pretrain", "finetune", "teachers", "strategies", "seeds", "train_split", "dev_split",
                "finetune_split", "eval_split"},
               where);
    const AblateConfig d;
    c.model = config_value(j, "model", d.model, where);
    c.pretrain = config_value(j, "pretrain", d.pretrain, where);
    c.finetune = config_value(j, "finetune", d.finetune, where);
    c.teachers = config_value(j, "teachers", d.teachers, where);
    c.strategies = d.strategies;
    if (j.contains("strategies")) {
        c.strategies.clear();
        for (const auto& name : config_value(j, "strategies", std::vector<std::string>{}, where)) {
            c.strategies.push_back(parse_sampling(name));
        }
    }
    c.seeds = config_value(j, "seeds", d.seeds, where);
    c.train_split = config_value(j, "train_split", d.train_split, where);
    c.dev_split = config_value(j, "dev_split", d.dev_split, where);
    c.finetune_split = config_value(j, "finetune_split", d.finetune_split, where);
    c.eval_split = config_value(j, "eval_split", d.eval_split, where);
}

// ---- commands ----------------------------------------------------------------------

void gen_data(const GenDataConfig& config, const fs::path& out) {
    config.validate();
    const SyntheticTask task(config.task);
    prepare_out(out, config);
    write_json(out / "task.json", config.task);
    write_split(out, "unlabeled", task.split("unlabeled", config.unlabeled), false);
    write_split(out, "dev", task.split("dev", config.dev));
    write_split(out, "train", task.split("train", config.train));
    write_split(out, "test", task.split("test", config.test));
}

void gen_teachers(const GenTeachersConfig& config, const fs::path& data, const fs::path& out) {
    config.validate();
    const TaskConfig task_config = read_task(data);
    check_split(data, config.dev_split);
    GenTeachersConfig effective = config;
    if (effective.teachers.empty()) effective.teachers = default_teacher_specs(task_config);
    for (const auto& s : effective.teachers) s.validate(task_config.input_dim);
    const auto dev = read_split(data, config.dev_split, task_config.vocab);

    const SyntheticTask task(task_config);
    prepare_out(out, effective);
    std::vector<std::string> ids;
    for (const auto& spec : effective.teachers) {
        Teacher teacher(spec, task);
        teacher.dev_wer = measure_dev_wer(teacher, dev, config.dev_beam);
        save_teacher(out, teacher);
        ids.push_back(teacher.id());
    }
    write_teacher_index(out, ids);
}

void extract_labels(const ExtractLabelsConfig& config, const fs::path& data, const fs::path& teachers,
                    const fs::path& out) {
    config.validate();
    const TaskConfig task = read_task(data);
    require_file(teachers / "teachers.json");
    const auto index = read_teacher_index(teachers);
    ExtractLabelsConfig effective = config;
    if (effective.teachers.empty()) effective.teachers = index;
    for (const auto& id : effective.teachers) {
        if (std::find(index.begin(), index.end(), id) == index.end()) {
            throw ConfigError("extract-labels: teacher '" + id + "' is not in " + (teachers / "teachers.json").string());
        }
    }
    for (const auto& s : effective.embed_splits) check_split(data, s);
    if (!effective.path_split.empty()) check_split(data, effective.path_split);
    if (!effective.pseudo_split.empty()) check_split(data, effective.pseudo_split);

    std::vector<Teacher> loaded;
    for (const auto& id : effective.teachers) {
        loaded.push_back(load_teacher(teachers, id));
        if (loaded.back().input_dim() != task.input_dim || loaded.back().vocab() != task.vocab) {
            throw ValidationError("extract-labels: teacher '" + id + "' was built for another task");
        }
    }

    prepare_out(out, effective);
    nlohmann::json index_json{{"task", task}, {"teachers", nlohmann::json::array()}};
    for (const auto& teacher : loaded) {
        index_json["teachers"].push_back({{"id", teacher.id()},
                                          {"embed_dim", teacher.embed_dim()},
                                          {"dev_wer", teacher.dev_wer ? nlohmann::json(*teacher.dev_wer)
                                                                      : nlohmann::json()}});
    }

    for (const auto& split : effective.embed_splits) {
        const auto utts = read_split(data, split, task.vocab);
        for (const auto& teacher : loaded) {
            EmbeddingArchive archive;
            archive.teacher_id = teacher.id();
            archive.dim = static_cast<std::uint32_t>(teacher.embed_dim());
            for (const auto& u : utts) archive.records.push_back({u.id, teacher.embed(u.features)});
            write_archive(embedding_path(out, teacher.id(), split), archive);
        }
    }
    if (!effective.path_split.empty()) {
        const auto utts = read_split(data, effective.path_split, task.vocab);
        std::vector<std::string> keys;
        for (const auto& u : utts) {
            if (u.tokens.empty()) throw ValidationError("extract-labels: '" + u.id + "' has no reference tokens");
            keys.push_back(u.id);
        }
        for (const auto& teacher : loaded) {
            const auto targets = extract_path_targets({&teacher}, utts);
            write_archive(paths_path(out, teacher.id(), effective.path_split),
                          encode_path_targets(teacher.id(), task.vocab, keys, targets.targets[0]));
        }
    }
    if (!effective.pseudo_split.empty()) {
        const auto utts = read_split(data, effective.pseudo_split, task.vocab);
        const auto entries = read_manifest(data / (effective.pseudo_split + ".jsonl"));
        const std::string relative =
            fs::relative(data / (effective.pseudo_split + ".features.tkde"), out).generic_string();
        for (const auto& teacher : loaded) {
            std::vector<ManifestEntry> pseudo;
            for (std::size_t i = 0; i < utts.size(); ++i) {
                const auto hash = entries[i].features.find('#');
                pseudo.push_back({utts[i].id, relative + entries[i].features.substr(hash),
                                  pseudo_transcribe(teacher, utts[i].features, effective.pseudo_beam), teacher.id()});
            }
            write_manifest(out / (effective.pseudo_split + ".pseudo." + teacher.id() + ".jsonl"), pseudo);
        }
    }
    write_json(out / "labels.json", index_json);
}

void pretrain(const PretrainConfig& config, const fs::path& data, const fs::path& labels, const fs::path& out) {
    config.validate();
    const TaskConfig task = read_task(data);
    check_model_fits(config.model, task);
    const auto index = read_labels_index(labels);
    const auto teachers = select_teachers(index, config.teachers);
    check_split(data, config.train_split);
    check_split(data, config.dev_split);
    check_labels(labels, teachers, {config.train_split, config.dev_split}, false);
    if (config.plan.sampling == SamplingKind::wer_based) {
        if (teachers.size() < 2) throw PreconditionError("pretrain: wer sampling needs at least 2 teachers");
        for (const auto& t : teachers) {
            if (!t.dev_wer) throw PreconditionError("pretrain: teacher '" + t.id + "' has no dev WER");
        }
    }
    const auto train = load_embedding_data(data, labels, config.train_split, teachers, task.vocab);
    const auto dev = load_embedding_data(data, labels, config.dev_split, teachers, task.vocab);

    PretrainConfig effective = config;
    effective.teachers.clear();
    for (const auto& t : teachers) effective.teachers.push_back(t.id);
    prepare_out(out, effective);
    const auto result = pretrain_encoder(config.model, config.plan, train, dev);
    write_file(out / "metrics.jsonl", metrics_to_jsonl(result.metrics));
    save_student(out / "student.ckpt", result.model, &result.lossnets,
                 {{"stage", "pretrain"}, {"best_epoch", result.best_epoch}});
    nlohmann::ordered_json summary;
    summary["best_epoch"] = result.best_epoch;
    summary["best_dev_l1"] = result.dev_l1[result.best_epoch];
    summary["dev_l1"] = result.dev_l1;
    summary["teacher_draws"] = result.teacher_draws;
    write_file(out / "summary.json", summary.dump(2) + "\n");
}

void finetune(const FinetuneConfig& config, const fs::path& data, const fs::path& labels, const fs::path& init,
              const fs::path& out) {
    config.validate();
    const TaskConfig task = read_task(data);
    check_model_fits(config.model, task);
    check_split(data, config.train_split);
    if (!config.eval_split.empty()) check_split(data, config.eval_split);
    const bool use_kd = config.plan.lambda > 0.0;
    std::vector<TeacherInfo> teachers;
    if (use_kd) {
        if (labels.empty()) {
            throw PreconditionError("finetune: lambda > 0 needs --labels with 1-best targets (or set plan.lambda = 0)");
        }
        teachers = select_teachers(read_labels_index(labels), config.teachers);
        check_labels(labels, teachers, {config.train_split}, true);
        if (!config.plan.omegas.empty() && config.plan.omegas.size() != teachers.size()) {
            throw ConfigError("finetune: omegas and teachers differ in length");
        }
    }
    std::optional<StudentCheckpoint> start;
    if (!init.empty()) {
        require_file(init);
        start = load_student(init);
    }
    const auto train_utts = read_split(data, config.train_split, task.vocab);
    const auto train = labeled_from(train_utts);
    std::optional<LabeledData> eval_data;
    if (!config.eval_split.empty()) eval_data = labeled_from(read_split(data, config.eval_split, task.vocab));
    std::optional<PathTargets> targets;
    if (use_kd) targets = load_path_targets(labels, config.train_split, teachers, train_utts, task.vocab);

    FinetuneConfig effective = config;
    effective.teachers.clear();
    for (const auto& t : teachers) effective.teachers.push_back(t.id);
    prepare_out(out, effective);
    const auto result = finetune(config.model, config.plan, train, start ? &start->model.encoder() : nullptr,
                                 targets ? &*targets : nullptr, eval_data ? &*eval_data : nullptr);
    write_file(out / "metrics.jsonl", metrics_to_jsonl(result.metrics));
    save_student(out / "student.ckpt", result.model, nullptr,
                 {{"stage", "finetune"}, {"init", init.empty() ? "" : init.filename().string()}});
    nlohmann::ordered_json report;
    report["eval_split"] = config.eval_split;
    report["ter"] = result.report ? nlohmann::ordered_json(result.report->ter) : nlohmann::ordered_json();
    report["final_loss"] = result.step_losses.back();
    write_file(out / "report.json", report.dump(2) + "\n");
}

namespace {

struct Decoded {
    std::vector<Utterance> utts;
    std::vector<LabelSequence> hypotheses;
};

Decoded decode_split(const DecodeConfig& config, const fs::path& data, const fs::path& model_path,
                     const fs::path& out) {
    config.validate();
    const TaskConfig task = read_task(data);
    check_split(data, config.split);
    require_file(model_path);
    const auto ckpt = load_student(model_path);
    check_model_fits(ckpt.model.config(), task);
    Decoded d;
    d.utts = read_split(data, config.split, task.vocab);
    prepare_out(out, config);
    for (const auto& u : d.utts) {
        d.hypotheses.push_back(beam_search_decode(ckpt.model.encode(u.features), ckpt.model.head(), config.beam).tokens);
    }
    return d;
}

}  // namespace

void decode(const DecodeConfig& config, const fs::path& data, const fs::path& model, const fs::path& out) {
    const auto d = decode_split(config, data, model, out);
    std::string lines;
    for (std::size_t i = 0; i < d.utts.size(); ++i) {
        nlohmann::ordered_json j;
        j["id"] = d.utts[i].id;
        j["tokens"] = d.hypotheses[i];
        lines += j.dump() + "\n";
    }
    write_file(out / "hypotheses.jsonl", lines);
}

void eval(const DecodeConfig& config, const fs::path& data, const fs::path& model, const fs::path& out) {
    const auto d = decode_split(config, data, model, out);
    std::vector<LabelSequence> refs;
    for (const auto& u : d.utts) refs.push_back(u.tokens);
    nlohmann::ordered_json j;
    j["split"] = config.split;
    j["beam"] = config.beam;
    j["utterances"] = d.utts.size();
    j["ter"] = token_error_rate(d.hypotheses, refs);
    write_file(out / "eval.json", j.dump(2) + "\n");
}

void ablate_sampling(const AblateConfig& config, const fs::path& data, const fs::path& labels,
                     const fs::path& out) {
    config.validate();
    const TaskConfig task = read_task(data);
    check_model_fits(config.model, task);
    const auto teachers = select_teachers(read_labels_index(labels), config.teachers);
    for (auto s : config.strategies) {
        if (s != SamplingKind::wer_based) continue;
        if (teachers.size() < 2) {
            throw PreconditionError("ablate-sampling: wer sampling needs at least 2 teachers, got " +
                                    std::to_string(teachers.size()));
        }
        for (const auto& t : teachers) {
            if (!t.dev_wer) throw PreconditionError("ablate-sampling: teacher '" + t.id + "' has no dev WER");
        }
    }
    for (const auto* s : {&config.train_split, &config.dev_split, &config.finetune_split, &config.eval_split}) {
        check_split(data, *s);
    }
    check_labels(labels, teachers, {config.train_split, config.dev_split}, false);
    const bool use_kd = config.finetune.lambda > 0.0;
    if (use_kd) check_labels(labels, teachers, {config.finetune_split}, true);

    const auto train = load_embedding_data(data, labels, config.train_split, teachers, task.vocab);
    const auto dev = load_embedding_data(data, labels, config.dev_split, teachers, task.vocab);
    const auto ft_utts = read_split(data, config.finetune_split, task.vocab);
    const auto ft_train = labeled_from(ft_utts);
    const auto eval_data = labeled_from(read_split(data, config.eval_split, task.vocab));
    std::optional<PathTargets> targets;
    if (use_kd) targets = load_path_targets(labels, config.finetune_split, teachers, ft_utts, task.vocab);

    AblateConfig effective = config;
    effective.teachers.clear();
    for (const auto& t : teachers) effective.teachers.push_back(t.id);
    prepare_out(out, effective);

    std::string rows;
    std::ostringstream table;
    table << "| strategy |";
    for (auto seed : config.seeds) table << " seed " << seed << " |";
    table << " median TER |\n|---|";
    for (std::size_t k = 0; k < config.seeds.size(); ++k) table << "---|";
    table << "---|\n";
    for (auto strategy : config.strategies) {
        std::vector<double> ters;
        table << "| " << to_string(strategy) << " |";
        for (auto seed : config.seeds) {
            PretrainPlan pp = config.pretrain;
            pp.sampling = strategy;
            pp.seed = seed;
            const auto pre = pretrain_encoder(config.model, pp, train, dev);
            FinetunePlan fp = config.finetune;
            fp.seed = seed;
            const auto ft = finetune(config.model, fp, ft_train, &pre.model.encoder(), targets ? &*targets : nullptr,
                                     &eval_data);
            ters.push_back(ft.report->ter);
            nlohmann::ordered_json r;
            r["strategy"] = to_string(strategy);
            r["seed"] = seed;
            r["best_epoch"] = pre.best_epoch;
            r["dev_l1"] = pre.dev_l1[pre.best_epoch];
            r["teacher_draws"] = pre.teacher_draws;
            r["ter"] = ft.report->ter;
            rows += r.dump() + "\n";
            table << " " << format_ter(ft.report->ter) << " |";
        }
        table << " " << format_ter(median(ters)) << " |\n";
    }
    write_file(out / "ablation.jsonl", rows);
    write_file(out / "ablation.md", table.str());
}

// ---- command line --------------------------------------------------------------------

std::string error_kind(const std::exception& e) {
    if (dynamic_cast<const BadMagicError*>(&e)) return "bad_magic";
    if (dynamic_cast<const VersionMismatchError*>(&e)) return "version_mismatch";
    if (dynamic_cast<const TruncatedArchiveError*>(&e)) return "truncated_archive";
    if (dynamic_cast<const DimensionMismatchError*>(&e)) return "dimension_mismatch";
    if (dynamic_cast<const TrailingDataError*>(&e)) return "trailing_data";
    if (dynamic_cast<const CheckpointError*>(&e)) return "checkpoint";
    if (dynamic_cast<const MissingInputError*>(&e)) return "missing_input";
    if (dynamic_cast<const ConfigError*>(&e)) return "config";
    if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
    if (dynamic_cast<const ShapeError*>(&e)) return "shape";
    if (dynamic_cast<const ValidationError*>(&e)) return "validation";
    if (dynamic_cast<const Error*>(&e)) return "error";
    if (dynamic_cast<const fs::filesystem_error*>(&e)) return "filesystem";
    return "internal";
}

namespace {

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

template <class Config>
Config load_config(const std::string& path) {
    if (path.empty()) return Config{};
    require_file(path);
    return read_json(path).get<Config>();
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Multi-teacher knowledge distillation for transducers at desk scale", "mtkd"};
    app.require_subcommand(1);
    std::string config_path, out_dir, data_dir, teachers_dir, labels_dir, init_path, model_path;

    auto add_config = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config; omitted keys take defaults, unknown keys are errors");
        cmd->add_option("--out", out_dir, "output directory")->required();
    };
    auto* gen_data_cmd = app.add_subcommand("gen-data", "write synthetic splits");
    add_config(gen_data_cmd);
    auto* gen_teachers_cmd = app.add_subcommand("gen-teachers", "build teachers and measure dev WER");
    add_config(gen_teachers_cmd);
    gen_teachers_cmd->add_option("--data", data_dir, "gen-data output")->required();
    auto* extract_cmd = app.add_subcommand("extract-labels", "store teacher embeddings, 1-best targets, pseudo labels");
    add_config(extract_cmd);
    extract_cmd->add_option("--data", data_dir, "gen-data output")->required();
    extract_cmd->add_option("--teachers", teachers_dir, "gen-teachers output")->required();
    auto* pretrain_cmd = app.add_subcommand("pretrain", "stage 1 from stored embeddings");
    add_config(pretrain_cmd);
    pretrain_cmd->add_option("--data", data_dir, "gen-data output")->required();
    pretrain_cmd->add_option("--labels", labels_dir, "extract-labels output")->required();
    auto* finetune_cmd = app.add_subcommand("finetune", "stage 2 on labeled data");
    add_config(finetune_cmd);
    finetune_cmd->add_option("--data", data_dir, "gen-data output")->required();
    finetune_cmd->add_option("--labels", labels_dir, "extract-labels output (needed when lambda > 0)");
    finetune_cmd->add_option("--init", init_path, "pretrained student.ckpt");
    auto* decode_cmd = app.add_subcommand("decode", "beam-search a split");
    add_config(decode_cmd);
    decode_cmd->add_option("--data", data_dir, "gen-data output")->required();
    decode_cmd->add_option("--model", model_path, "student.ckpt")->required();
    auto* eval_cmd = app.add_subcommand("eval", "token error rate of a split");
    add_config(eval_cmd);
    eval_cmd->add_option("--data", data_dir, "gen-data output")->required();
    eval_cmd->add_option("--model", model_path, "student.ckpt")->required();
    auto* ablate_cmd = app.add_subcommand("ablate-sampling", "compare teacher sampling strategies");
    add_config(ablate_cmd);
    ablate_cmd->add_option("--data", data_dir, "gen-data output")->required();
    ablate_cmd->add_option("--labels", labels_dir, "extract-labels output")->required();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    if (!reversed.empty()) reversed.pop_back();
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: usage: " << one_line(e.what()) << "\n";
        return 2;
    }

    try {
        if (*gen_data_cmd) {
            gen_data(load_config<GenDataConfig>(config_path), out_dir);
        } else if (*gen_teachers_cmd) {
            gen_teachers(load_config<GenTeachersConfig>(config_path), data_dir, out_dir);
        } else if (*extract_cmd) {
            extract_labels(load_config<ExtractLabelsConfig>(config_path), data_dir, teachers_dir, out_dir);
        } else if (*pretrain_cmd) {
            pretrain(load_config<PretrainConfig>(config_path), data_dir, labels_dir, out_dir);
        } else if (*finetune_cmd) {
            finetune(load_config<FinetuneConfig>(config_path), data_dir, labels_dir, init_path, out_dir);
        } else if (*decode_cmd) {
            decode(load_config<DecodeConfig>(config_path), data_dir, model_path, out_dir);
        } else if (*eval_cmd) {
            eval(load_config<DecodeConfig>(config_path), data_dir, model_path, out_dir);
        } else if (*ablate_cmd) {
            ablate_sampling(load_config<AblateConfig>(config_path), data_dir, labels_dir, out_dir);
        }
    } catch (const std::exception& e) {
        err << "error: " << error_kind(e) << ": " << one_line(e.what()) << "\n";
        return 1;
    }
    return 0;
}

}  // namespace mtkd::commands
