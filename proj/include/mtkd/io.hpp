#pragma once

#include "mtkd/data.hpp"
#include "mtkd/pipeline.hpp"
#include "mtkd/student.hpp"
#include "mtkd/teachers.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace mtkd {

namespace fs = std::filesystem;

/// An input file or directory does not exist.
class MissingInputError : public Error {
public:
    using Error::Error;
};

// ---- embedding archive ---------------------------------------------------------
//
// Little-endian throughout:
//   "TKDE"  u32 version  u16 len + teacher id  u32 D  u32 record count
//   per record: u16 len + key, u32 T, T*D float32 values (row-major)

inline constexpr std::uint32_t kArchiveVersion = 1;

class ArchiveError : public Error {
public:
    using Error::Error;
};

class BadMagicError : public ArchiveError {
public:
    using ArchiveError::ArchiveError;
};

class VersionMismatchError : public ArchiveError {
public:
    using ArchiveError::ArchiveError;
};

class TruncatedArchiveError : public ArchiveError {
public:
    /// record_index < 0 means the header itself is cut short.
    TruncatedArchiveError(const std::string& what, long record_index)
        : ArchiveError(what), record_index_(record_index) {}
    long record_index() const { return record_index_; }

private:
    long record_index_;
};

class DimensionMismatchError : public ArchiveError {
public:
    using ArchiveError::ArchiveError;
};

class TrailingDataError : public ArchiveError {
public:
    using ArchiveError::ArchiveError;
};

struct EmbeddingRecord {
    std::string key;
    Matrix values;  // T x D, float32-representable
};

struct EmbeddingArchive {
    std::string teacher_id;
    std::uint32_t dim = 0;
    std::vector<EmbeddingRecord> records;

    /// Record by key; throws ValidationError if absent.
    const EmbeddingRecord& at(const std::string& key) const;
};

std::string encode_archive(const EmbeddingArchive& archive);
/// Validates magic, version, every length, D (against `expected_dim` when
/// given) and that no bytes trail the last record.
EmbeddingArchive decode_archive(std::string_view bytes,
                                std::optional<std::uint32_t> expected_dim = std::nullopt);

void write_archive(const fs::path& path, const EmbeddingArchive& archive);
EmbeddingArchive read_archive(const fs::path& path,
                              std::optional<std::uint32_t> expected_dim = std::nullopt);

// ---- checkpoint ------------------------------------------------------------------
//
//   "TKDC"  u32 version  u32 len + JSON metadata  u32 block count
//   per block: u16 len + name, u32 rows, u32 cols, rows*cols float64 (row-major)

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public Error {
public:
    using Error::Error;
};

struct NamedBlock {
    std::string name;
    Matrix values;
};

struct Checkpoint {
    nlohmann::json meta;
    std::vector<NamedBlock> blocks;
};

std::string encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::string_view bytes);
void write_checkpoint(const fs::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const fs::path& path);

template <class Model>
void append_blocks(Model& model, const std::string& prefix, std::vector<NamedBlock>& out) {
    model.visit([&out](const std::string& name, Matrix& m) { out.push_back({name, m}); }, prefix);
}

/// Copies every block of `model` from `checkpoint` by name and shape.
template <class Model>
void restore_blocks(Model& model, const Checkpoint& checkpoint, const std::string& prefix) {
    model.visit(
        [&checkpoint](const std::string& name, Matrix& m) {
            for (const auto& b : checkpoint.blocks) {
                if (b.name != name) continue;
                if (b.values.rows() != m.rows() || b.values.cols() != m.cols()) {
                    throw CheckpointError("checkpoint: block '" + name + "' has the wrong shape");
                }
                m = b.values;
                return;
            }
            throw CheckpointError("checkpoint: missing block '" + name + "'");
        },
        prefix);
}

struct StudentCheckpoint {
    StudentModel model;
    LossNetBank lossnets;
    nlohmann::json meta;
};

/// Metadata records the model config and LossNet shapes; `extra` is merged in.
void save_student(const fs::path& path, const StudentModel& model, const LossNetBank* lossnets = nullptr,
                  const nlohmann::json& extra = nlohmann::json::object());
StudentCheckpoint load_student(const fs::path& path);

// ---- teachers --------------------------------------------------------------------

/// Writes <dir>/<id>.json (spec, shapes, dev WER) and <dir>/<id>.params.tkde
/// (one D = 1 record per parameter block).
void save_teacher(const fs::path& dir, const Teacher& teacher);
Teacher load_teacher(const fs::path& dir, const std::string& id);

/// Teacher ids listed in <dir>/teachers.json, in order.
std::vector<std::string> read_teacher_index(const fs::path& dir);
void write_teacher_index(const fs::path& dir, const std::vector<std::string>& ids);

// ---- manifests and splits ------------------------------------------------------------

struct ManifestEntry {
    std::string id;
    /// "<archive file relative to the manifest>#<record key>"
    std::string features;
    std::optional<LabelSequence> tokens;
    std::optional<std::string> pseudo_teacher;
};

std::vector<ManifestEntry> read_manifest(const fs::path& path);
void write_manifest(const fs::path& path, const std::vector<ManifestEntry>& entries);

/// Ids unique; tokens non-blank and below `vocab`.
void validate_manifest(const std::vector<ManifestEntry>& entries, std::size_t vocab);

/// <dir>/<split>.jsonl + <dir>/<split>.features.tkde.
void write_split(const fs::path& dir, const std::string& split, const std::vector<Utterance>& utterances,
                 bool with_tokens = true);
/// Utterances without tokens come back with an empty token list.
std::vector<Utterance> read_split(const fs::path& dir, const std::string& split, std::size_t vocab);

// ---- 1-best target archive ---------------------------------------------------------
//
// An embedding archive with D = 2 + V; each row is (t, u, p_0 .. p_{V-1}).
// Values pass through float32.

EmbeddingArchive encode_path_targets(const std::string& teacher_id, std::size_t vocab,
                                     const std::vector<std::string>& keys,
                                     const std::vector<std::vector<PathNodeTarget>>& targets);
std::vector<std::vector<PathNodeTarget>> decode_path_targets(const EmbeddingArchive& archive,
                                                             const std::vector<std::string>& keys,
                                                             std::size_t vocab);

// ---- small helpers -------------------------------------------------------------------

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, std::string_view bytes);
nlohmann::json read_json(const fs::path& path);
void write_json(const fs::path& path, const nlohmann::json& j);

}  // namespace mtkd
