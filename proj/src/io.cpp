#include "mtkd/io.hpp"

#include "mtkd/config.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace mtkd {
namespace {

class ByteWriter {
public:
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void f32(float v) { put(std::bit_cast<std::uint32_t>(v), 4); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
    void bytes(std::string_view s) { out_.append(s); }
    void str16(const std::string& s, const char* what) {
        if (s.size() > 0xffff) throw ValidationError(std::string(what) + " longer than 65535 bytes");
        u16(static_cast<std::uint16_t>(s.size()));
        bytes(s);
    }
    std::string take() { return std::move(out_); }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) out_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string out_;
};

// Reads little-endian fields; `fail` is called with a description on underrun.
template <class Fail>
class ByteReader {
public:
    ByteReader(std::string_view data, Fail fail) : data_(data), fail_(fail) {}

    std::size_t remaining() const { return data_.size() - pos_; }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    float f32() { return std::bit_cast<float>(static_cast<std::uint32_t>(get(4))); }
    double f64() { return std::bit_cast<double>(get(8)); }
    std::string_view take(std::size_t n) {
        if (remaining() < n) fail_();
        const auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::string str16() {
        const std::uint16_t n = u16();
        return std::string(take(n));
    }

private:
    std::uint64_t get(int n) {
        if (remaining() < static_cast<std::size_t>(n)) fail_();
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
        }
        pos_ += static_cast<std::size_t>(n);
        return v;
    }
    std::string_view data_;
    std::size_t pos_ = 0;
    Fail fail_;
};

Eigen::Index idx(std::size_t n) { return static_cast<Eigen::Index>(n); }

}  // namespace

// ---- small helpers -------------------------------------------------------------------

std::string read_file(const fs::path& path) {
    if (!fs::exists(path)) throw MissingInputError("missing input '" + path.string() + "'");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "' for reading");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("write to '" + path.string() + "' failed");
}

nlohmann::json read_json(const fs::path& path) {
    try {
        return nlohmann::json::parse(read_file(path));
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_file(path, j.dump(2) + "\n"); }

// ---- embedding archive ---------------------------------------------------------

const EmbeddingRecord& EmbeddingArchive::at(const std::string& key) const {
    for (const auto& r : records) {
        if (r.key == key) return r;
    }
    throw ValidationError("archive '" + teacher_id + "': no record '" + key + "'");
}

std::string encode_archive(const EmbeddingArchive& archive) {
    ByteWriter w;
    w.bytes("TKDE");
    w.u32(kArchiveVersion);
    w.str16(archive.teacher_id, "archive teacher id");
    w.u32(archive.dim);
    w.u32(static_cast<std::uint32_t>(archive.records.size()));
    for (std::size_t i = 0; i < archive.records.size(); ++i) {
        const auto& r = archive.records[i];
        if (static_cast<std::uint32_t>(r.values.cols()) != archive.dim && r.values.rows() > 0) {
            std::ostringstream os;
            os << "archive: record " << i << " ('" << r.key << "') has D=" << r.values.cols()
               << ", header D=" << archive.dim;
            throw DimensionMismatchError(os.str());
        }
        w.str16(r.key, "archive key");
        w.u32(static_cast<std::uint32_t>(r.values.rows()));
        for (Eigen::Index k = 0; k < r.values.size(); ++k) w.f32(static_cast<float>(r.values.data()[k]));
    }
    return w.take();
}

EmbeddingArchive decode_archive(std::string_view bytes, std::optional<std::uint32_t> expected_dim) {
    long record = -1;
    auto fail = [&record]() {
        std::ostringstream os;
        if (record < 0) {
            os << "archive truncated in header";
        } else {
            os << "archive truncated in record " << record;
        }
        throw TruncatedArchiveError(os.str(), record);
    };
    ByteReader reader(bytes, fail);
    if (reader.remaining() < 4 || reader.take(4) != "TKDE") throw BadMagicError("archive: bad magic (expected TKDE)");
    const std::uint32_t version = reader.u32();
    if (version != kArchiveVersion) {
        std::ostringstream os;
        os << "archive: version " << version << " not supported (expected " << kArchiveVersion << ")";
        throw VersionMismatchError(os.str());
    }
    EmbeddingArchive archive;
    archive.teacher_id = reader.str16();
    archive.dim = reader.u32();
    const std::uint32_t count = reader.u32();
    if (expected_dim && archive.dim != *expected_dim) {
        std::ostringstream os;
        os << "archive '" << archive.teacher_id << "': D=" << archive.dim << ", expected " << *expected_dim;
        throw DimensionMismatchError(os.str());
    }
    if (archive.dim == 0 && count > 0) {
        throw DimensionMismatchError("archive '" + archive.teacher_id + "': D=0 with nonempty records");
    }
    std::set<std::string> keys;
    for (std::uint32_t i = 0; i < count; ++i) {
        record = static_cast<long>(i);
        EmbeddingRecord r;
        r.key = reader.str16();
        const std::uint32_t T = reader.u32();
        const std::uint64_t n = static_cast<std::uint64_t>(T) * archive.dim;
        if (n * 4 > reader.remaining()) fail();
        r.values.resize(idx(T), idx(archive.dim));
        for (std::uint64_t k = 0; k < n; ++k) r.values.data()[k] = static_cast<double>(reader.f32());
        if (!keys.insert(r.key).second) {
            throw ValidationError("archive '" + archive.teacher_id + "': duplicate key '" + r.key + "'");
        }
        archive.records.push_back(std::move(r));
    }
    if (reader.remaining() != 0) {
        std::ostringstream os;
        os << "archive '" << archive.teacher_id << "': " << reader.remaining()
           << " bytes after the last record (header count or D inconsistent with the data)";
        throw TrailingDataError(os.str());
    }
    return archive;
}

void write_archive(const fs::path& path, const EmbeddingArchive& archive) {
    write_file(path, encode_archive(archive));
}

EmbeddingArchive read_archive(const fs::path& path, std::optional<std::uint32_t> expected_dim) {
    try {
        return decode_archive(read_file(path), expected_dim);
    } catch (const TruncatedArchiveError& e) {
        throw TruncatedArchiveError(path.string() + ": " + e.what(), e.record_index());
    } catch (const BadMagicError& e) {
        throw BadMagicError(path.string() + ": " + e.what());
    } catch (const VersionMismatchError& e) {
        throw VersionMismatchError(path.string() + ": " + e.what());
    } catch (const DimensionMismatchError& e) {
        throw DimensionMismatchError(path.string() + ": " + e.what());
    } catch (const TrailingDataError& e) {
        throw TrailingDataError(path.string() + ": " + e.what());
    }
}

// ---- checkpoint ------------------------------------------------------------------

std::string encode_checkpoint(const Checkpoint& checkpoint) {
    ByteWriter w;
    w.bytes("TKDC");
    w.u32(kCheckpointVersion);
    const std::string meta = checkpoint.meta.dump();
    w.u32(static_cast<std::uint32_t>(meta.size()));
    w.bytes(meta);
    w.u32(static_cast<std::uint32_t>(checkpoint.blocks.size()));
    for (const auto& b : checkpoint.blocks) {
        w.str16(b.name, "checkpoint block name");
        w.u32(static_cast<std::uint32_t>(b.values.rows()));
        w.u32(static_cast<std::uint32_t>(b.values.cols()));
        for (Eigen::Index k = 0; k < b.values.size(); ++k) w.f64(b.values.data()[k]);
    }
    return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    auto fail = []() { throw CheckpointError("checkpoint truncated"); };
    ByteReader reader(bytes, fail);
    if (reader.remaining() < 4 || reader.take(4) != "TKDC") throw CheckpointError("checkpoint: bad magic");
    if (reader.u32() != kCheckpointVersion) throw CheckpointError("checkpoint: unsupported version");
    Checkpoint c;
    const std::uint32_t meta_len = reader.u32();
    try {
        c.meta = nlohmann::json::parse(reader.take(meta_len));
    } catch (const nlohmann::json::parse_error&) {
        throw CheckpointError("checkpoint: metadata is not valid JSON");
    }
    const std::uint32_t count = reader.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedBlock b;
        b.name = reader.str16();
        const std::uint32_t rows = reader.u32();
        const std::uint32_t cols = reader.u32();
        const std::uint64_t n = static_cast<std::uint64_t>(rows) * cols;
        if (n * 8 > reader.remaining()) fail();
        b.values.resize(idx(rows), idx(cols));
        for (std::uint64_t k = 0; k < n; ++k) b.values.data()[k] = reader.f64();
        c.blocks.push_back(std::move(b));
    }
    if (reader.remaining() != 0) throw CheckpointError("checkpoint: trailing bytes");
    return c;
}

void write_checkpoint(const fs::path& path, const Checkpoint& checkpoint) {
    write_file(path, encode_checkpoint(checkpoint));
}

Checkpoint read_checkpoint(const fs::path& path) {
    try {
        return decode_checkpoint(read_file(path));
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

void save_student(const fs::path& path, const StudentModel& model, const LossNetBank* lossnets,
                  const nlohmann::json& extra) {
    Checkpoint c;
    c.meta = extra;
    c.meta["kind"] = "student";
    c.meta["model"] = model.config();
    nlohmann::json nets = nlohmann::json::array();
    StudentModel model_copy = model;
    append_blocks(model_copy, "", c.blocks);
    if (lossnets != nullptr) {
        for (std::size_t i = 0; i < lossnets->nets.size(); ++i) {
            nets.push_back({{"id", lossnets->teacher_ids[i]},
                            {"student_dim", lossnets->nets[i].input_dim()},
                            {"teacher_dim", lossnets->nets[i].output_dim()}});
        }
        LossNetBank nets_copy = *lossnets;
        append_blocks(nets_copy, "", c.blocks);
    }
    c.meta["lossnets"] = nets;
    write_checkpoint(path, c);
}

StudentCheckpoint load_student(const fs::path& path) {
    const Checkpoint c = read_checkpoint(path);
    if (c.meta.value("kind", "") != "student") {
        throw CheckpointError(path.string() + ": not a student checkpoint");
    }
    StudentCheckpoint out;
    out.meta = c.meta;
    out.model = StudentModel(c.meta.at("model").get<ModelConfig>(), 0);
    restore_blocks(out.model, c, "");
    for (const auto& n : c.meta.at("lossnets")) {
        out.lossnets.teacher_ids.push_back(n.at("id").get<std::string>());
        out.lossnets.nets.emplace_back(n.at("student_dim").get<std::size_t>(),
                                       n.at("teacher_dim").get<std::size_t>());
    }
    restore_blocks(out.lossnets, c, "");
    return out;
}

// ---- teachers --------------------------------------------------------------------

void save_teacher(const fs::path& dir, const Teacher& teacher) {
    Teacher copy = teacher;
    nlohmann::json meta{{"spec", teacher.spec()},
                        {"input_dim", teacher.input_dim()},
                        {"vocab", teacher.vocab()},
                        {"dev_wer", teacher.dev_wer ? nlohmann::json(*teacher.dev_wer) : nlohmann::json()}};
    nlohmann::json shapes = nlohmann::json::object();
    EmbeddingArchive params;
    params.teacher_id = teacher.id();
    params.dim = 1;
    copy.visit(
        [&](const std::string& name, Matrix& m) {
            shapes[name] = {m.rows(), m.cols()};
            Matrix column = Eigen::Map<const Matrix>(m.data(), m.size(), 1);
            params.records.push_back({name, column});
        },
        "");
    meta["shapes"] = shapes;
    write_json(dir / (teacher.id() + ".json"), meta);
    write_archive(dir / (teacher.id() + ".params.tkde"), params);
}

Teacher load_teacher(const fs::path& dir, const std::string& id) {
    const auto meta = read_json(dir / (id + ".json"));
    const auto spec = meta.at("spec").get<TeacherSpec>();
    if (spec.id != id) throw ValidationError("teacher metadata for '" + id + "' names '" + spec.id + "'");
    Teacher teacher = Teacher::blank(spec, meta.at("input_dim").get<std::size_t>(),
                                     meta.at("vocab").get<std::size_t>());
    if (!meta.at("dev_wer").is_null()) teacher.dev_wer = meta.at("dev_wer").get<double>();
    const auto params = read_archive(dir / (id + ".params.tkde"), 1u);
    teacher.visit(
        [&](const std::string& name, Matrix& m) {
            const auto& record = params.at(name);
            if (record.values.rows() != m.size()) {
                throw DimensionMismatchError("teacher '" + id + "': block '" + name + "' has the wrong size");
            }
            m = Eigen::Map<const Matrix>(record.values.data(), m.rows(), m.cols());
        },
        "");
    return teacher;
}

std::vector<std::string> read_teacher_index(const fs::path& dir) {
    return read_json(dir / "teachers.json").at("teachers").get<std::vector<std::string>>();
}

void write_teacher_index(const fs::path& dir, const std::vector<std::string>& ids) {
    write_json(dir / "teachers.json", nlohmann::json{{"teachers", ids}});
}

// ---- manifests and splits ------------------------------------------------------------

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::vector<ManifestEntry> entries;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error&) {
            throw ConfigError(where + ": not valid JSON");
        }
        check_keys(j, {"id", "features", "tokens", "pseudo_teacher"}, where);
        if (!j.contains("id") || !j.contains("features")) throw ConfigError(where + ": needs id and features");
        ManifestEntry e;
        e.id = config_value(j, "id", std::string(), where);
        e.features = config_value(j, "features", std::string(), where);
        if (j.contains("tokens")) e.tokens = config_value(j, "tokens", LabelSequence(), where);
        if (j.contains("pseudo_teacher")) e.pseudo_teacher = config_value(j, "pseudo_teacher", std::string(), where);
        entries.push_back(std::move(e));
    }
    return entries;
}

void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries) {
    std::string out;
    for (const auto& e : entries) {
        nlohmann::ordered_json j;
        j["id"] = e.id;
        j["features"] = e.features;
        if (e.tokens) j["tokens"] = *e.tokens;
        if (e.pseudo_teacher) j["pseudo_teacher"] = *e.pseudo_teacher;
        out += j.dump();
        out += '\n';
    }
    write_file(path, out);
}

void validate_manifest(const std::vector<ManifestEntry>& entries, std::size_t vocab) {
    std::set<std::string> ids;
    for (const auto& e : entries) {
        if (!ids.insert(e.id).second) throw ValidationError("manifest: duplicate id '" + e.id + "'");
        if (e.tokens) {
            for (int t : *e.tokens) {
                if (t <= kBlank || static_cast<std::size_t>(t) >= vocab) {
                    throw ValidationError("manifest: utterance '" + e.id + "' has token " +
                                          std::to_string(t) + " outside [1, V)");
                }
            }
        }
    }
}

void write_split(const fs::path& dir, const std::string& split, const std::vector<Utterance>& utterances,
                 bool with_tokens) {
    EmbeddingArchive features;
    features.teacher_id = "features";
    features.dim = utterances.empty() ? 0 : static_cast<std::uint32_t>(utterances.front().features.cols());
    std::vector<ManifestEntry> entries;
    const std::string archive_name = split + ".features.tkde";
    for (const auto& u : utterances) {
        features.records.push_back({u.id, u.features});
        ManifestEntry e{u.id, archive_name + "#" + u.id, std::nullopt, std::nullopt};
        if (with_tokens) e.tokens = u.tokens;
        entries.push_back(std::move(e));
    }
    write_archive(dir / archive_name, features);
    write_manifest(dir / (split + ".jsonl"), entries);
}

std::vector<Utterance> read_split(const fs::path& dir, const std::string& split, std::size_t vocab) {
    const fs::path manifest_path = dir / (split + ".jsonl");
    const auto entries = read_manifest(manifest_path);
    validate_manifest(entries, vocab);
    std::map<std::string, EmbeddingArchive> archives;
    std::vector<Utterance> out;
    for (const auto& e : entries) {
        const auto hash = e.features.find('#');
        if (hash == std::string::npos) {
            throw ConfigError(manifest_path.string() + ": features of '" + e.id + "' lack '#key'");
        }
        const std::string file = e.features.substr(0, hash);
        auto it = archives.find(file);
        if (it == archives.end()) it = archives.emplace(file, read_archive(manifest_path.parent_path() / file)).first;
        Utterance u;
        u.id = e.id;
        u.features = it->second.at(e.features.substr(hash + 1)).values;
        if (e.tokens) u.tokens = *e.tokens;
        out.push_back(std::move(u));
    }
    return out;
}

// ---- 1-best target archive ---------------------------------------------------------

EmbeddingArchive encode_path_targets(const std::string& teacher_id, std::size_t vocab,
                                     const std::vector<std::string>& keys,
                                     const std::vector<std::vector<PathNodeTarget>>& targets) {
    if (keys.size() != targets.size()) throw ShapeError("path targets: key count differs from target count");
    EmbeddingArchive archive;
    archive.teacher_id = teacher_id;
    archive.dim = static_cast<std::uint32_t>(2 + vocab);
    for (std::size_t i = 0; i < keys.size(); ++i) {
        Matrix rows(idx(targets[i].size()), idx(2 + vocab));
        for (std::size_t r = 0; r < targets[i].size(); ++r) {
            const auto& node = targets[i][r];
            if (node.probs.size() != vocab) throw ShapeError("path targets: row size differs from V");
            rows(idx(r), 0) = node.t;
            rows(idx(r), 1) = node.u;
            for (std::size_t k = 0; k < vocab; ++k) rows(idx(r), idx(2 + k)) = node.probs[k];
        }
        archive.records.push_back({keys[i], std::move(rows)});
    }
    return archive;
}

std::vector<std::vector<PathNodeTarget>> decode_path_targets(const EmbeddingArchive& archive,
                                                             const std::vector<std::string>& keys,
                                                             std::size_t vocab) {
    if (archive.dim != 2 + vocab) {
        throw DimensionMismatchError("path archive '" + archive.teacher_id + "': D does not match 2 + V");
    }
    std::vector<std::vector<PathNodeTarget>> out;
    for (const auto& key : keys) {
        const Matrix& rows = archive.at(key).values;
        std::vector<PathNodeTarget> nodes;
        for (Eigen::Index r = 0; r < rows.rows(); ++r) {
            PathNodeTarget node{static_cast<int>(rows(r, 0)), static_cast<int>(rows(r, 1)),
                                std::vector<double>(vocab)};
            for (std::size_t k = 0; k < vocab; ++k) node.probs[k] = rows(r, idx(2 + k));
            nodes.push_back(std::move(node));
        }
        out.push_back(std::move(nodes));
    }
    return out;
}

}  // namespace mtkd
