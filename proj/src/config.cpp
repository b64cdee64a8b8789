#include "sphdiff/config.hpp"

#include <filesystem>
#include <fstream>

#include "sphdiff/errors.hpp"
#include "sphdiff/io.hpp"

namespace sphdiff {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const json* find(const json& obj, const char* key) {
    const auto it = obj.find(key);
    return it == obj.end() ? nullptr : &*it;
}

void require_object(const json& j, const std::string& path) {
    if (!j.is_object()) throw ConfigError("expected an object", path);
}

// Rejects keys outside `allowed`, which catches typos in hand-written configs.
void check_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& path) {
    for (const auto& [key, _] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) throw ConfigError("unknown field", path.empty() ? key : path + "." + key);
    }
}

double get_number(const json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError("expected a number", path);
    return j.get<double>();
}

long long get_integer(const json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ConfigError("expected an integer", path);
    return j.get<long long>();
}

int get_int(const json& j, const std::string& path, long long lo, long long hi) {
    const long long v = get_integer(j, path);
    if (v < lo || v > hi)
        throw ConfigError("must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]", path);
    return static_cast<int>(v);
}

std::string get_string(const json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError("expected a string", path);
    return j.get<std::string>();
}

bool get_bool(const json& j, const std::string& path) {
    if (!j.is_boolean()) throw ConfigError("expected true or false", path);
    return j.get<bool>();
}

std::uint64_t get_seed(const json& j, const std::string& path) {
    if (j.is_number_unsigned()) return j.get<std::uint64_t>();
    if (j.is_number_integer() && j.get<long long>() >= 0) return static_cast<std::uint64_t>(j.get<long long>());
    if (j.is_string()) {
        const std::string s = j.get<std::string>();
        try {
            std::size_t used = 0;
            const auto v = std::stoull(s, &used, 0);
            if (used == s.size() && !s.empty() && s[0] != '-') return v;
        } catch (const std::exception&) {
        }
    }
    throw ConfigError("expected an unsigned 64-bit integer", path);
}

// A field is either a dense array of (L+1)^2 numbers in flat order or a sparse
// list of {"ell", "m", "value"} entries (missing coefficients are zero).
CoeffField parse_field(const json& j, int L, const std::string& path) {
    CoeffField f(L);
    if (!j.is_array()) throw ConfigError("expected an array", path);
    if (!j.empty() && j.front().is_object()) {
        for (std::size_t i = 0; i < j.size(); ++i) {
            const std::string p = path + "[" + std::to_string(i) + "]";
            const json& e = j[i];
            require_object(e, p);
            check_keys(e, {"ell", "m", "value"}, p);
            if (!find(e, "ell") || !find(e, "m") || !find(e, "value"))
                throw ConfigError("entries need ell, m and value", p);
            const HarmonicIndex idx{get_int(e["ell"], p + ".ell", 0, L), get_int(e["m"], p + ".m", -L, L)};
            if (!idx.valid()) throw ConfigError("|m| must not exceed ell", p + ".m");
            f.at(idx.ell, idx.m) = get_number(e["value"], p + ".value");
        }
        return f;
    }
    if (j.size() != f.size())
        throw ConfigError("expected " + std::to_string(f.size()) + " coefficients, got " + std::to_string(j.size()),
                          path);
    for (std::size_t k = 0; k < j.size(); ++k) f[k] = get_number(j[k], path + "[" + std::to_string(k) + "]");
    return f;
}

// "prior" (s = C), {"prior_multiple": a} (s = a C) or an explicit per-degree array.
std::vector<double> parse_var_scale(const json* j, const Spectrum& spec, const std::string& path) {
    const auto& c = spec.values();
    if (!j) return c;
    if (j->is_string()) {
        if (j->get<std::string>() != "prior") throw ConfigError("expected \"prior\"", path);
        return c;
    }
    if (j->is_object()) {
        check_keys(*j, {"prior_multiple"}, path);
        const json* a = find(*j, "prior_multiple");
        if (!a) throw ConfigError("missing prior_multiple", path);
        const double mult = get_number(*a, path + ".prior_multiple");
        std::vector<double> s(c);
        for (double& v : s) v *= mult;
        return s;
    }
    if (j->is_array()) {
        std::vector<double> s;
        for (std::size_t i = 0; i < j->size(); ++i) s.push_back(get_number((*j)[i], path + "[" + std::to_string(i) + "]"));
        return s;
    }
    throw ConfigError("expected \"prior\", {\"prior_multiple\": x} or an array", path);
}

DataModel parse_data(const json& j, const Spectrum& spec, const std::string& base_dir) {
    require_object(j, "data");
    const json* type = find(j, "type");
    if (!type) throw ConfigError("missing data model type", "data.type");
    const std::string name = get_string(*type, "data.type");
    const int L = spec.band_limit();
    DataModel model;
    if (name == "gaussian_shift") {
        check_keys(j, {"type", "mean", "var_scale"}, "data");
        GaussianShift g;
        g.mean = find(j, "mean") ? parse_field(j["mean"], L, "data.mean") : CoeffField(L);
        g.var_scale = parse_var_scale(find(j, "var_scale"), spec, "data.var_scale");
        model = std::move(g);
    } else if (name == "gaussian_mixture") {
        check_keys(j, {"type", "components", "var_scale"}, "data");
        const json* comps = find(j, "components");
        if (!comps || !comps->is_array()) throw ConfigError("expected an array of components", "data.components");
        GaussianMixture g;
        for (std::size_t i = 0; i < comps->size(); ++i) {
            const std::string p = "data.components[" + std::to_string(i) + "]";
            const json& c = (*comps)[i];
            require_object(c, p);
            check_keys(c, {"weight", "mean"}, p);
            if (!find(c, "weight")) throw ConfigError("missing weight", p + ".weight");
            g.weights.push_back(get_number(c["weight"], p + ".weight"));
            g.means.push_back(find(c, "mean") ? parse_field(c["mean"], L, p + ".mean") : CoeffField(L));
        }
        g.var_scale = parse_var_scale(find(j, "var_scale"), spec, "data.var_scale");
        model = std::move(g);
    } else if (name == "empirical") {
        check_keys(j, {"type", "atoms", "atom_files"}, "data");
        Empirical e;
        if (const json* atoms = find(j, "atoms")) {
            if (!atoms->is_array()) throw ConfigError("expected an array", "data.atoms");
            for (std::size_t i = 0; i < atoms->size(); ++i)
                e.atoms.push_back(parse_field((*atoms)[i], L, "data.atoms[" + std::to_string(i) + "]"));
        }
        if (const json* files = find(j, "atom_files")) {
            if (!files->is_array()) throw ConfigError("expected an array of paths", "data.atom_files");
            for (std::size_t i = 0; i < files->size(); ++i) {
                const std::string p = "data.atom_files[" + std::to_string(i) + "]";
                fs::path file = get_string((*files)[i], p);
                if (file.is_relative()) file = fs::path(base_dir) / file;
                CoeffField atom = io::read_coeff_csv(file.string());
                if (atom.band_limit() != L)
                    throw ConfigError("atom band limit " + std::to_string(atom.band_limit()) + " does not match " +
                                          std::to_string(L),
                                      p);
                e.atoms.push_back(std::move(atom));
            }
        }
        model = std::move(e);
    } else {
        throw ConfigError("unknown data model '" + name + "' (expected gaussian_shift, gaussian_mixture or empirical)",
                          "data.type");
    }
    validate(model, spec);
    return model;
}

void parse_train(const json& j, RunConfig& cfg) {
    require_object(j, "train");
    check_keys(j,
               {"architecture", "hidden", "n_samples", "step_size", "epochs", "minibatch", "clip_norm", "loss_norm",
                "sampling", "fixed_dataset", "seed"},
               "train");
    TrainConfig& t = cfg.train;
    if (const json* v = find(j, "architecture")) {
        try {
            cfg.architecture = architecture_from_string(get_string(*v, "train.architecture"));
        } catch (const ConfigError& e) {
            if (!e.path().empty()) throw;
            throw ConfigError(e.what(), "train.architecture");
        }
    }
    if (const json* v = find(j, "hidden")) {
        if (!v->is_array()) throw ConfigError("expected an array of layer widths", "train.hidden");
        cfg.hidden.clear();
        for (std::size_t i = 0; i < v->size(); ++i)
            cfg.hidden.push_back(get_int((*v)[i], "train.hidden[" + std::to_string(i) + "]", 1, 4096));
    }
    if (const json* v = find(j, "n_samples")) t.n_samples = get_int(*v, "train.n_samples", 1, 1 << 24);
    if (const json* v = find(j, "step_size")) t.step_size = get_number(*v, "train.step_size");
    if (const json* v = find(j, "epochs")) t.epochs = get_int(*v, "train.epochs", 1, 1 << 24);
    if (const json* v = find(j, "clip_norm")) t.clip_norm = get_number(*v, "train.clip_norm");
    if (const json* v = find(j, "loss_norm")) {
        try {
            t.loss_norm = loss_norm_from_string(get_string(*v, "train.loss_norm"));
        } catch (const ConfigError& e) {
            if (!e.path().empty()) throw;
            throw ConfigError(e.what(), "train.loss_norm");
        }
    }
    if (const json* v = find(j, "sampling")) {
        const std::string s = get_string(*v, "train.sampling");
        if (s == "jump")
            t.sampling = PairSampling::Jump;
        else if (s == "trajectory")
            t.sampling = PairSampling::Trajectory;
        else
            throw ConfigError("expected \"jump\" or \"trajectory\"", "train.sampling");
    }
    if (const json* v = find(j, "fixed_dataset")) t.fixed_dataset = get_bool(*v, "train.fixed_dataset");
    if (const json* v = find(j, "seed")) t.seed = get_seed(*v, "train.seed");
    if (const json* v = find(j, "minibatch")) t.minibatch = get_int(*v, "train.minibatch", 0, 1 << 30);
}

void parse_verify(const json& j, VerifyConfig& v) {
    require_object(j, "verify");
    check_keys(j, {"n_mc", "h1_n_mc", "n_fit_samples", "score_offset", "level"}, "verify");
    if (const json* x = find(j, "n_mc")) v.n_mc = get_int(*x, "verify.n_mc", 2, 1 << 28);
    if (const json* x = find(j, "h1_n_mc")) v.h1_n_mc = get_int(*x, "verify.h1_n_mc", 2, 1 << 28);
    if (const json* x = find(j, "n_fit_samples")) v.n_fit_samples = get_int(*x, "verify.n_fit_samples", 2, 1 << 28);
    if (const json* x = find(j, "score_offset")) v.score_offset = get_number(*x, "verify.score_offset");
    if (const json* x = find(j, "level")) {
        v.level = get_number(*x, "verify.level");
        if (!(v.level > 0.0 && v.level < 1.0)) throw ConfigError("must be in (0, 1)", "verify.level");
    }
}

json field_json(const CoeffField& f) { return f.values(); }

}  // namespace

namespace {

// Prior covariance with the l=0 mean moved to 1.
GaussianShift default_data(const Spectrum& spec) {
    GaussianShift g{CoeffField(spec.band_limit()), spec.values()};
    g.mean[0] = 1.0;
    return g;
}

}  // namespace

RunConfig default_config() {
    RunConfig cfg;
    cfg.data = default_data(cfg.spectrum());
    return cfg;
}

RunConfig parse_config(const json& j, const std::string& base_dir) {
    require_object(j, "<root>");
    check_keys(j, {"matern", "band_limit", "time", "data", "train", "generate", "verify", "seed", "output_dir"}, "");
    RunConfig cfg;
    if (const json* m = find(j, "matern")) {
        require_object(*m, "matern");
        check_keys(*m, {"kappa", "beta"}, "matern");
        if (const json* v = find(*m, "kappa")) cfg.matern.kappa = get_number(*v, "matern.kappa");
        if (const json* v = find(*m, "beta")) cfg.matern.beta = get_number(*v, "matern.beta");
    }
    try {
        cfg.matern.validate();
    } catch (const std::exception& e) {
        throw ConfigError(e.what(), "matern");
    }
    if (const json* v = find(j, "band_limit")) cfg.band_limit = get_int(*v, "band_limit", 0, 4096);
    if (const json* t = find(j, "time")) {
        require_object(*t, "time");
        check_keys(*t, {"T", "M"}, "time");
        if (const json* v = find(*t, "T")) {
            cfg.horizon = get_number(*v, "time.T");
            if (!(cfg.horizon > 0.0) || !std::isfinite(cfg.horizon)) throw ConfigError("must be > 0", "time.T");
        }
        if (const json* v = find(*t, "M")) cfg.steps = get_int(*v, "time.M", 1, 1 << 24);
    }
    const Spectrum spec = cfg.spectrum();
    if (const json* d = find(j, "data"))
        cfg.data = parse_data(*d, spec, base_dir);
    else
        cfg.data = default_data(spec);
    if (const json* v = find(j, "seed")) cfg.seed = get_seed(*v, "seed");
    cfg.train.seed = cfg.seed;
    if (const json* t = find(j, "train")) parse_train(*t, cfg);
    cfg.train.validate(cfg.steps);
    if (const json* g = find(j, "generate")) {
        require_object(*g, "generate");
        check_keys(*g, {"n_samples"}, "generate");
        if (const json* v = find(*g, "n_samples")) cfg.n_samples = get_int(*v, "generate.n_samples", 0, 1 << 28);
    }
    if (const json* v = find(j, "verify")) parse_verify(*v, cfg.verify);
    if (const json* v = find(j, "output_dir")) cfg.output_dir = get_string(*v, "output_dir");
    return cfg;
}

RunConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON: ") + e.what(), path);
    }
    const fs::path base = fs::path(path).parent_path();
    return parse_config(j, base.empty() ? "." : base.string());
}

json config_to_json(const RunConfig& cfg) {
    json j;
    j["matern"] = {{"kappa", cfg.matern.kappa}, {"beta", cfg.matern.beta}};
    j["band_limit"] = cfg.band_limit;
    j["time"] = {{"T", cfg.horizon}, {"M", cfg.steps}};
    std::visit(
        [&](const auto& m) {
            using M = std::decay_t<decltype(m)>;
            json d;
            if constexpr (std::is_same_v<M, GaussianShift>) {
                d["type"] = "gaussian_shift";
                d["mean"] = field_json(m.mean);
                d["var_scale"] = m.var_scale;
            } else if constexpr (std::is_same_v<M, GaussianMixture>) {
                d["type"] = "gaussian_mixture";
                d["components"] = json::array();
                for (std::size_t i = 0; i < m.means.size(); ++i)
                    d["components"].push_back({{"weight", m.weights[i]}, {"mean", field_json(m.means[i])}});
                d["var_scale"] = m.var_scale;
            } else {
                d["type"] = "empirical";
                d["atoms"] = json::array();
                for (const auto& a : m.atoms) d["atoms"].push_back(field_json(a));
            }
            j["data"] = std::move(d);
        },
        cfg.data);
    const TrainConfig& t = cfg.train;
    j["train"] = {{"architecture", to_string(cfg.architecture)},
                  {"hidden", cfg.hidden},
                  {"n_samples", t.n_samples},
                  {"step_size", t.step_size},
                  {"epochs", t.epochs},
                  {"minibatch", t.minibatch},
                  {"clip_norm", t.clip_norm},
                  {"loss_norm", to_string(t.loss_norm)},
                  {"sampling", t.sampling == PairSampling::Jump ? "jump" : "trajectory"},
                  {"fixed_dataset", t.fixed_dataset},
                  {"seed", t.seed}};
    j["generate"] = {{"n_samples", cfg.n_samples}};
    j["verify"] = {{"n_mc", cfg.verify.n_mc},
                   {"h1_n_mc", cfg.verify.h1_n_mc},
                   {"n_fit_samples", cfg.verify.n_fit_samples},
                   {"score_offset", cfg.verify.score_offset},
                   {"level", cfg.verify.level}};
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    return j;
}

}  // namespace sphdiff
