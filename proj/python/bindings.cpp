#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <iostream>

#include "sphdiff/cli.hpp"
#include "sphdiff/config.hpp"
#include "sphdiff/diagnostics.hpp"
#include "sphdiff/errors.hpp"
#include "sphdiff/sampler.hpp"

namespace py = pybind11;
using namespace sphdiff;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Array to_array(std::span<const double> v) {
    Array a(static_cast<py::ssize_t>(v.size()));
    std::copy(v.begin(), v.end(), a.mutable_data());
    return a;
}

CoeffField to_coeffs(const Array& a) {
    if (a.ndim() != 1) throw py::value_error("coefficients must be a 1-d array");
    const auto n = static_cast<std::size_t>(a.size());
    const int L = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n)))) - 1;
    if (L < 0 || static_cast<std::size_t>((L + 1) * (L + 1)) != n)
        throw py::value_error("coefficient count must be (L+1)^2");
    return CoeffField(L, std::vector<double>(a.data(), a.data() + n));
}

RunConfig config_from(const py::object& cfg) {
    if (cfg.is_none()) return default_config();
    if (py::isinstance<py::str>(cfg)) return load_config(cfg.cast<std::string>());
    // dict: round-trip through JSON text
    const std::string text = py::module_::import("json").attr("dumps")(cfg).cast<std::string>();
    return parse_config(nlohmann::json::parse(text));
}

}  // namespace

PYBIND11_MODULE(_sphdiff, m) {
    m.doc() = "Score-based diffusion for band-limited spherical random fields";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<IoError>(m, "IoError", PyExc_OSError);
    py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);

    m.def(
        "matern_spectrum",
        [](double kappa, double beta, int band_limit) {
            return to_array(matern_spectrum({kappa, beta}, band_limit).values());
        },
        py::arg("kappa"), py::arg("beta"), py::arg("band_limit"));

    m.def(
        "sample_prior",
        [](const Array& spectrum, std::uint64_t seed, int n) {
            const Spectrum spec(std::vector<double>(spectrum.data(), spectrum.data() + spectrum.size()));
            const auto K = static_cast<py::ssize_t>((spec.band_limit() + 1) * (spec.band_limit() + 1));
            Array out({static_cast<py::ssize_t>(n), K});
            for (int i = 0; i < n; ++i) {
                RngStream rng(seed, Purpose::PriorSample, static_cast<std::uint64_t>(i));
                const CoeffField a = sample_prior(spec, rng);
                std::copy(a.values().begin(), a.values().end(), out.mutable_data(i, 0));
            }
            return out;
        },
        py::arg("spectrum"), py::arg("seed") = 0, py::arg("n") = 1,
        "Draw n prior coefficient vectors; row i uses the stream (seed, prior, i).");

    m.def(
        "synthesize",
        [](const Array& coeffs, int n_theta, int n_phi) {
            const CoeffField a = to_coeffs(coeffs);
            const SphereGrid g = n_theta > 0 ? SphereGrid(n_theta, n_phi) : SphereGrid::for_band_limit(a.band_limit());
            const GridField f = synthesize(a, g);
            Array values({static_cast<py::ssize_t>(g.n_theta()), static_cast<py::ssize_t>(g.n_phi())});
            std::copy(f.values().begin(), f.values().end(), values.mutable_data());
            std::vector<double> theta(g.n_theta()), phi(g.n_phi());
            for (int i = 0; i < g.n_theta(); ++i) theta[i] = g.theta(i);
            for (int k = 0; k < g.n_phi(); ++k) phi[k] = g.phi(k);
            return py::make_tuple(to_array(theta), to_array(phi), values);
        },
        py::arg("coeffs"), py::arg("n_theta") = 0, py::arg("n_phi") = 0,
        "Evaluate a field on a Gauss-Legendre x equispaced grid; returns (theta, phi, values).");

    m.def(
        "analyze",
        [](const Array& values, int band_limit) {
            if (values.ndim() != 2) throw py::value_error("values must be a 2-d (n_theta, n_phi) array");
            const SphereGrid g(static_cast<int>(values.shape(0)), static_cast<int>(values.shape(1)));
            const GridField f(g, std::vector<double>(values.data(), values.data() + values.size()));
            return to_array(analyze(f, band_limit).values());
        },
        py::arg("values"), py::arg("band_limit"));

    m.def(
        "generate",
        [](const py::object& cfg, int n, std::uint64_t seed) {
            const RunConfig c = config_from(cfg);
            const Spectrum spec = c.spectrum();
            const TimeGrid grid = c.grid();
            const auto d = make_exact_denoiser(c.data, spec);
            const auto K = static_cast<py::ssize_t>((c.band_limit + 1) * (c.band_limit + 1));
            Array out({static_cast<py::ssize_t>(n), K});
            py::gil_scoped_release release;
            for (int i = 0; i < n; ++i) {
                RngStream rng(seed, Purpose::Backward, static_cast<std::uint64_t>(i));
                const CoeffField y = sample_backward(spec, grid, *d, rng);
                std::copy(y.values().begin(), y.values().end(), out.mutable_data(i, 0));
            }
            return out;
        },
        py::arg("config") = py::none(), py::arg("n") = 1, py::arg("seed") = 0,
        "Backward sampling with the exact denoiser of the configured data model.");

    m.def(
        "bound_report",
        [](const py::object& cfg) {
            const RunConfig c = config_from(cfg);
            const auto* shift = std::get_if<GaussianShift>(&c.data);
            if (!shift) throw ConfigError("the KL bound needs gaussian_shift data", "data.type");
            const BoundReport r = verify_kl_bound(*shift, c.spectrum(), c.grid());
            const std::string text = r.to_json().dump();
            return py::module_::import("json").attr("loads")(text);
        },
        py::arg("config") = py::none(), "KL bound terms and the exactly measured KL for the exact score.");

    m.def(
        "kl_bound",
        [](double horizon, double eps_sq, double h, double kl0, double fisher) {
            return kl_error_bound(horizon, eps_sq, h, kl0, fisher).bound;
        },
        py::arg("horizon"), py::arg("eps_sq"), py::arg("h"), py::arg("kl0"), py::arg("fisher"));

    m.def(
        "run_cli",
        [](const std::vector<std::string>& args) {
            py::gil_scoped_release release;
            return run_cli(args, std::cout, std::cerr);
        },
        py::arg("args"), "Run the command-line interface in-process; returns the exit code.");
}
