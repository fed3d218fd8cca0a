#include "mtkd/commands.hpp"
#include "mtkd/io.hpp"
#include "mtkd/kd_losses.hpp"
#include "mtkd/lattice.hpp"
#include "mtkd/pipeline.hpp"
#include "mtkd/teachers.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

namespace py = pybind11;
using namespace mtkd;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

// (T, U+1, V) log-probabilities -> lattice
DistributionLattice to_lattice(const Array& a) {
    if (a.ndim() != 3) throw ShapeError("lattice must be a (T, U+1, V) array");
    const auto T = static_cast<std::size_t>(a.shape(0));
    const auto U1 = static_cast<std::size_t>(a.shape(1));
    const auto V = static_cast<std::size_t>(a.shape(2));
    if (U1 == 0) throw ShapeError("lattice needs at least one label row");
    std::vector<double> values(a.data(), a.data() + a.size());
    return DistributionLattice::from_log_probs(T, U1 - 1, V, std::move(values));
}

Array grad_like(const DistributionLattice& lattice, const std::vector<double>& grad) {
    Array out({lattice.frames(), lattice.labels() + 1, lattice.vocab()});
    std::copy(grad.begin(), grad.end(), out.mutable_data());
    return out;
}

LrSchedule preset(const std::string& name, std::size_t total) {
    if (name == "100h") return lr_schedule_100h(total);
    if (name == "960h") return lr_schedule_960h(total);
    throw ValidationError("unknown schedule preset '" + name + "' (100h or 960h)");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "mtkd core";

    auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
    auto archive = py::register_exception<ArchiveError>(m, "ArchiveError", error.ptr());
    py::register_exception<BadMagicError>(m, "BadMagicError", archive.ptr());
    py::register_exception<VersionMismatchError>(m, "VersionMismatchError", archive.ptr());
    py::register_exception<TruncatedArchiveError>(m, "TruncatedArchiveError", archive.ptr());
    py::register_exception<DimensionMismatchError>(m, "DimensionMismatchError", archive.ptr());
    py::register_exception<TrailingDataError>(m, "TrailingDataError", archive.ptr());

    m.def(
        "rnnt_loss",
        [](const Array& log_probs, const LabelSequence& y) {
            const auto lattice = to_lattice(log_probs);
            const auto r = rnnt_loss(lattice, y);
            return py::make_tuple(r.value, grad_like(lattice, r.grad));
        },
        py::arg("log_probs"), py::arg("labels"),
        "Negative log-likelihood and its gradient w.r.t. the log-probs.");

    m.def(
        "brute_force_loss",
        [](const Array& log_probs, const LabelSequence& y) { return brute_force_loss(to_lattice(log_probs), y); },
        py::arg("log_probs"), py::arg("labels"), "Same loss by enumerating every alignment.");

    m.def(
        "one_best_alignment",
        [](const Array& log_probs, const LabelSequence& y) {
            std::vector<std::tuple<int, int, int>> steps;
            for (const auto& s : one_best_alignment(to_lattice(log_probs), y).steps) {
                steps.emplace_back(s.t, s.u, s.symbol);
            }
            return steps;
        },
        py::arg("log_probs"), py::arg("labels"), "Viterbi path as (t, u, symbol) steps.");

    m.def(
        "full_lattice_kd",
        [](const Array& teacher, const Array& student) {
            const auto s = to_lattice(student);
            const auto r = full_lattice_kd(to_lattice(teacher), s);
            return py::make_tuple(r.value, grad_like(s, r.grad));
        },
        py::arg("teacher"), py::arg("student"));

    m.def(
        "collapsed_kd",
        [](const Array& teacher, const Array& student, const LabelSequence& y) {
            const auto s = to_lattice(student);
            const auto r = collapsed_kd(collapse(to_lattice(teacher), y), collapse(s, y));
            return py::make_tuple(r.value, grad_like(s, collapse_backward(s, y, r.grad)));
        },
        py::arg("teacher"), py::arg("student"), py::arg("labels"));

    m.def(
        "one_best_kd",
        [](const Array& teacher, const Array& student, const LabelSequence& y, std::size_t tau) {
            const auto t = to_lattice(teacher);
            const auto s = to_lattice(student);
            const auto r = one_best_kd(t, s, one_best_alignment(t, y), tau);
            return py::make_tuple(r.value, grad_like(s, r.grad));
        },
        py::arg("teacher"), py::arg("student"), py::arg("labels"), py::arg("tau") = 0,
        "Cross-entropy along the teacher's 1-best path, student read tau frames later.");

    m.def(
        "nbest_kd",
        [](const std::vector<double>& losses, const std::vector<double>& omegas) { return nbest_kd(losses, omegas); },
        py::arg("losses"), py::arg("omegas"));
    m.def("final_loss", &final_loss, py::arg("rnnt"), py::arg("nbest"), py::arg("lam"));

    m.def("uniform_probs", &uniform_probs, py::arg("n"));
    m.def(
        "wer_probs", [](const std::vector<double>& wers) { return wer_probs(wers); }, py::arg("wers"));
    m.def(
        "similarity_probs",
        [](const std::vector<Matrix>& students, const std::vector<Matrix>& teachers) {
            return similarity_probs(students, teachers).probs;
        },
        py::arg("projected_students"), py::arg("teachers"));

    m.def(
        "tri_stage_lr",
        [](std::size_t step, std::size_t total_steps, const std::string& name) {
            return tri_stage_lr(step, preset(name, total_steps));
        },
        py::arg("step"), py::arg("total_steps"), py::arg("preset") = "100h");

    m.def(
        "read_archive",
        [](const fs::path& path, std::optional<std::uint32_t> dim) {
            const auto a = read_archive(path, dim);
            py::dict records;
            for (const auto& r : a.records) records[py::str(r.key)] = r.values;
            return py::make_tuple(a.teacher_id, a.dim, records);
        },
        py::arg("path"), py::arg("expected_dim") = py::none(),
        "(teacher_id, D, {key: (T, D) array}) in file order.");

    m.def(
        "write_archive",
        [](const fs::path& path, const std::string& teacher_id, std::uint32_t dim,
           const std::vector<std::pair<std::string, Matrix>>& records) {
            EmbeddingArchive a;
            a.teacher_id = teacher_id;
            a.dim = dim;
            for (const auto& [key, values] : records) a.records.push_back({key, values});
            write_archive(path, a);
        },
        py::arg("path"), py::arg("teacher_id"), py::arg("dim"), py::arg("records"),
        "Values are stored as float32.");

    m.def(
        "run",
        [](std::vector<std::string> args) {
            args.insert(args.begin(), "mtkd");
            std::ostringstream out, err;
            int rc = 0;
            {
                py::gil_scoped_release release;
                rc = commands::run(args, out, err);
            }
            return py::make_tuple(rc, out.str(), err.str());
        },
        py::arg("args"), "Runs one CLI command; returns (status, stdout, stderr).");
}
