#pragma once

// Experiment configuration: INI sections parsed into typed settings, with
// every invalid or unknown field collected before anything is rejected.

#include "msgm/evalbench.hpp"
#include "msgm/io.hpp"
#include "msgm/likelihood.hpp"
#include "msgm/scorenet.hpp"
#include "msgm/sde.hpp"
#include "msgm/unlearn.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace msgm {

/// Raised with one line per offending field.
class ConfigError : public ValidationError {
public:
    explicit ConfigError(std::vector<std::string> problems)
        : ValidationError(join(problems)), problems_(std::move(problems)) {}

    const std::vector<std::string>& problems() const { return problems_; }

private:
    static std::string join(const std::vector<std::string>& p) {
        std::string s = "invalid config:";
        for (const auto& x : p) s += "\n  " + x;
        return s;
    }
    std::vector<std::string> problems_;
};

enum class SamplerMethod { EulerMaruyama, PredictorCorrector };

struct SamplerSettings {
    SamplerMethod method = SamplerMethod::EulerMaruyama;
    long n_samples = 10000;
    int n_steps = 1000;
    double snr = 0.16;
    int corrector_steps = 1;
};

struct DataSettings {
    long n_retain = 16000; ///< training draws from the SFG components
    long n_forget = 4000;  ///< training draws from the NSFG components
    long n_test = 500;     ///< held-out draws per split for NLL and reconstruction
};

struct InpaintSettings {
    std::vector<bool> mask{true, false}; ///< true: coordinate is observed
    std::vector<double> observed{0.0, 0.0};
    long n_samples = 2000;
    int n_steps = 1000;
};

struct ReconstructSettings {
    double t_star = 0.02;
    int n_steps = 100;
};

struct EvalSettings {
    double field_t = 0.08;
    Rect rect{};
    int resolution = 25;
    double ur_threshold = 0.5;
    std::optional<std::filesystem::path> reference_checkpoint; ///< Standard model for field/reconstruction comparison
};

enum class SweepParam { Alpha, Interval };

struct AblationSettings {
    SweepParam param = SweepParam::Alpha;
    std::vector<double> values;
};

struct ExperimentConfig {
    std::string name = "experiment";
    std::uint64_t seed = 0;
    std::filesystem::path out_dir = "out";
    std::vector<MixtureComponent> mixture_components = MixtureSpec::toy().components();
    SdeSpec sde{};
    NetArch net{};
    TrainPlan train{};
    std::optional<std::filesystem::path> base_checkpoint;
    DataSettings data{};
    SamplerSettings sampler{};
    IntegratorSettings likelihood{};
    InpaintSettings inpaint{};
    ReconstructSettings reconstruct{};
    EvalSettings eval{};
    AblationSettings ablation{};

    MixtureSpec mixture() const { return MixtureSpec(mixture_components); }
};

/// Independent RNG streams derived from the global seed. Each consumer gets
/// its own stream so changing one stage never shifts another's draws.
struct SeedStreams {
    std::uint64_t data, test, init, train, sample, nll, inpaint, reconstruct;

    explicit SeedStreams(std::uint64_t seed) {
        const RngState root(seed);
        data = root.split(1).seed();
        test = root.split(2).seed();
        init = root.split(3).seed();
        train = root.split(4).seed();
        sample = root.split(5).seed();
        nll = root.split(6).seed();
        inpaint = root.split(7).seed();
        reconstruct = root.split(8).seed();
    }
};

namespace config_detail {

namespace pt = boost::property_tree;

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t") - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

/// Reads one section, recording problems instead of throwing.
class Section {
public:
    Section(const pt::ptree* tree, std::string name, std::vector<std::string>& problems)
        : tree_(tree), name_(std::move(name)), problems_(problems) {}

    bool present() const { return tree_ != nullptr; }
    bool has(const std::string& key) const { return tree_ && tree_->find(key) != tree_->not_found(); }

    std::optional<std::string> raw(const std::string& key) {
        seen_.insert(key);
        if (!has(key)) return std::nullopt;
        return trim(tree_->find(key)->second.data());
    }

    void fail(const std::string& key, const std::string& what) { problems_.push_back(name_ + "." + key + ": " + what); }

    template <class T, class Parse>
    void read(const std::string& key, T& dst, Parse&& parse) {
        auto v = raw(key);
        if (!v) return;
        try {
            dst = parse(*v);
        } catch (const std::exception& e) {
            fail(key, e.what());
        }
    }

    void number(const std::string& key, double& dst) { read(key, dst, [](const std::string& s) { return parse_double(s); }); }

    template <class I>
    void integer(const std::string& key, I& dst) {
        read(key, dst, [](const std::string& s) {
            I v{};
            auto res = std::from_chars(s.data(), s.data() + s.size(), v);
            if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) throw ValidationError("not an integer: '" + s + "'");
            return v;
        });
    }

    void boolean(const std::string& key, bool& dst) {
        read(key, dst, [](const std::string& s) {
            if (s == "true" || s == "1" || s == "yes") return true;
            if (s == "false" || s == "0" || s == "no") return false;
            throw ValidationError("not a boolean: '" + s + "'");
        });
    }

    void numbers(const std::string& key, std::vector<double>& dst) {
        read(key, dst, [](const std::string& s) {
            std::vector<double> out;
            for (const auto& item : split_list(s)) out.push_back(parse_double(item));
            return out;
        });
    }

    void check_unknown() {
        if (!tree_) return;
        for (const auto& [k, v] : *tree_) {
            if (!seen_.count(k)) problems_.push_back(name_ + "." + k + ": unknown key");
        }
    }

private:
    const pt::ptree* tree_;
    std::string name_;
    std::vector<std::string>& problems_;
    std::set<std::string> seen_;
};

inline void check(bool ok, std::vector<std::string>& problems, const std::string& field, const std::string& what) {
    if (!ok) problems.push_back(field + ": " + what);
}

inline std::string doubles(const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? ", " : "") + format_double(v[i]);
    return s;
}

} // namespace config_detail

struct ConfigOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> mode;
    std::optional<std::filesystem::path> out_dir;
};

/// Parses INI text. Relative paths inside the config resolve against
/// `base_dir`; overrides replace the corresponding fields before validation.
inline ExperimentConfig parse_config(const std::string& text, const std::filesystem::path& base_dir = {},
                                     const ConfigOverrides& over = {}) {
    namespace pt = boost::property_tree;
    using config_detail::Section;
    pt::ptree tree;
    try {
        std::istringstream in(text);
        pt::read_ini(in, tree);
    } catch (const pt::ini_parser_error& e) {
        throw ConfigError({std::string("syntax: ") + e.message() + " (line " + std::to_string(e.line()) + ")"});
    }

    std::vector<std::string> problems;
    ExperimentConfig cfg;
    std::map<std::string, Section> sections;
    auto section = [&](const std::string& name) -> Section& {
        auto it = sections.find(name);
        if (it == sections.end()) {
            auto child = tree.find(name);
            const pt::ptree* p = child == tree.not_found() ? nullptr : &child->second;
            it = sections.emplace(name, Section(p, name, problems)).first;
        }
        return it->second;
    };
    auto resolve = [&](const std::string& s) {
        std::filesystem::path p(s);
        return p.is_relative() && !base_dir.empty() ? base_dir / p : p;
    };

    {
        Section& s = section("experiment");
        s.read("name", cfg.name, [](const std::string& v) { return v; });
        s.integer("seed", cfg.seed);
        s.read("out_dir", cfg.out_dir, [&](const std::string& v) { return resolve(v); });
        if (over.seed) cfg.seed = *over.seed;
        if (over.out_dir) cfg.out_dir = *over.out_dir;
    }

    {
        Section& s = section("mixture");
        std::string preset = "toy";
        s.read("preset", preset, [](const std::string& v) { return v; });
        if (preset == "custom") {
            cfg.mixture_components.clear();
            long n = 0;
            s.integer("components", n);
            if (n < 1) s.fail("components", "custom mixture needs components >= 1");
            for (long k = 0; k < n; ++k) {
                Section& c = section("component" + std::to_string(k));
                if (!c.present()) {
                    problems.push_back("component" + std::to_string(k) + ": section missing");
                    continue;
                }
                MixtureComponent comp{1.0, {}, {}, false};
                std::vector<double> mean, cov;
                c.number("weight", comp.weight);
                c.numbers("mean", mean);
                c.numbers("cov", cov);
                c.boolean("nsfg", comp.nsfg);
                const auto d = static_cast<Eigen::Index>(mean.size());
                if (d == 0) c.fail("mean", "required");
                if (static_cast<Eigen::Index>(cov.size()) != d * d) c.fail("cov", "must hold dim*dim row-major entries");
                if (comp.weight <= 0.0) c.fail("weight", "must be positive");
                if (d > 0 && static_cast<Eigen::Index>(cov.size()) == d * d) {
                    comp.mean = Eigen::Map<const Eigen::VectorXd>(mean.data(), d);
                    comp.cov = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
                        cov.data(), d, d);
                    cfg.mixture_components.push_back(comp);
                }
            }
        } else if (preset != "toy") {
            s.fail("preset", "expected toy or custom");
        }
        if (problems.empty()) {
            try {
                (void)cfg.mixture();
            } catch (const ValidationError& e) {
                problems.push_back(std::string("mixture: ") + e.what());
            }
        }
    }

    {
        Section& s = section("sde");
        std::string kind = "VE";
        s.read("kind", kind, [](const std::string& v) { return v; });
        try {
            cfg.sde.kind = parse_sde_kind(kind);
        } catch (const std::exception& e) {
            s.fail("kind", e.what());
        }
        s.number("T", cfg.sde.T);
        s.number("t_eps", cfg.sde.t_eps);
        const bool ve = cfg.sde.kind == SdeKind::VE;
        for (const char* key : {"sigma_min", "sigma_max", "beta_min", "beta_max"}) {
            const bool needed = ve == (std::string(key).rfind("sigma", 0) == 0);
            if (needed && !s.has(key)) s.fail(key, std::string("required for ") + (ve ? "VE" : "VP") + " sde");
        }
        s.number("sigma_min", cfg.sde.sigma_min);
        s.number("sigma_max", cfg.sde.sigma_max);
        s.number("beta_min", cfg.sde.beta_min);
        s.number("beta_max", cfg.sde.beta_max);
        config_detail::check(cfg.sde.t_eps > 0.0 && cfg.sde.t_eps < cfg.sde.T, problems, "sde.t_eps", "require 0 < t_eps < T");
        if (ve) {
            config_detail::check(cfg.sde.sigma_min > 0.0 && cfg.sde.sigma_min < cfg.sde.sigma_max, problems,
                                 "sde.sigma_min", "require 0 < sigma_min < sigma_max");
        } else {
            config_detail::check(cfg.sde.beta_min >= 0.0 && cfg.sde.beta_min < cfg.sde.beta_max, problems,
                                 "sde.beta_min", "require 0 <= beta_min < beta_max");
        }
    }

    {
        Section& s = section("net");
        std::vector<double> widths;
        s.numbers("widths", widths);
        if (s.has("widths")) {
            cfg.net.widths.clear();
            for (double w : widths) {
                if (w < 1 || w != std::floor(w)) s.fail("widths", "every width must be a positive integer");
                cfg.net.widths.push_back(static_cast<int>(w));
            }
            if (widths.empty()) s.fail("widths", "must be non-empty");
        }
        s.integer("n_freq", cfg.net.n_freq);
        config_detail::check(cfg.net.n_freq >= 1, problems, "net.n_freq", "must be positive");
        if (!cfg.mixture_components.empty()) cfg.net.input_dim = static_cast<int>(cfg.mixture_components.front().mean.size());
    }

    {
        Section& s = section("train");
        TrainPlan& p = cfg.train;
        s.read("mode", p.mode, [](const std::string& v) { return parse_train_mode(v); });
        if (over.mode) {
            try {
                p.mode = parse_train_mode(*over.mode);
            } catch (const std::exception& e) {
                problems.push_back(std::string("--mode: ") + e.what());
            }
        }
        s.number("alpha", p.alpha);
        s.integer("update_interval", p.update_interval);
        s.integer("steps", p.steps);
        s.integer("batch_size", p.batch_size);
        s.number("learning_rate", p.learning_rate);
        s.number("beta1", p.beta1);
        s.number("beta2", p.beta2);
        s.number("adam_eps", p.adam_eps);
        s.read("lambda", p.lambda, [](const std::string& v) { return parse_weighting(v); });
        s.boolean("obtuse_hinge", p.obtuse_hinge);
        s.read("base_checkpoint", cfg.base_checkpoint, [&](const std::string& v) { return std::optional(resolve(v)); });
        config_detail::check(p.alpha >= 0.0 && p.alpha <= 1.0, problems, "train.alpha", "must lie in [0, 1]");
        config_detail::check(p.update_interval >= 1, problems, "train.update_interval", "must be >= 1");
        config_detail::check(p.steps >= 1, problems, "train.steps", "must be >= 1");
        config_detail::check(p.batch_size >= 1, problems, "train.batch_size", "must be >= 1");
        config_detail::check(p.learning_rate > 0.0, problems, "train.learning_rate", "must be positive");
        config_detail::check(p.beta1 >= 0.0 && p.beta1 < 1.0, problems, "train.beta1", "must lie in [0, 1)");
        config_detail::check(p.beta2 >= 0.0 && p.beta2 < 1.0, problems, "train.beta2", "must lie in [0, 1)");
        config_detail::check(p.adam_eps > 0.0, problems, "train.adam_eps", "must be positive");
    }

    {
        Section& s = section("data");
        s.integer("n_retain", cfg.data.n_retain);
        s.integer("n_forget", cfg.data.n_forget);
        s.integer("n_test", cfg.data.n_test);
        config_detail::check(cfg.data.n_retain >= 1, problems, "data.n_retain", "must be >= 1");
        config_detail::check(cfg.data.n_forget >= 1, problems, "data.n_forget", "must be >= 1");
        config_detail::check(cfg.data.n_test >= 1, problems, "data.n_test", "must be >= 1");
    }

    {
        Section& s = section("sampler");
        s.read("method", cfg.sampler.method, [](const std::string& v) {
            if (v == "em") return SamplerMethod::EulerMaruyama;
            if (v == "pc") return SamplerMethod::PredictorCorrector;
            throw ValidationError("expected em or pc");
        });
        s.integer("n_samples", cfg.sampler.n_samples);
        s.integer("n_steps", cfg.sampler.n_steps);
        s.number("snr", cfg.sampler.snr);
        s.integer("corrector_steps", cfg.sampler.corrector_steps);
        config_detail::check(cfg.sampler.n_samples >= 1, problems, "sampler.n_samples", "must be >= 1");
        config_detail::check(cfg.sampler.n_steps >= 10, problems, "sampler.n_steps", "must be >= 10");
        config_detail::check(cfg.sampler.snr >= 0.0, problems, "sampler.snr", "must be >= 0");
        config_detail::check(cfg.sampler.corrector_steps >= 0, problems, "sampler.corrector_steps", "must be >= 0");
    }

    {
        Section& s = section("likelihood");
        IntegratorSettings& l = cfg.likelihood;
        s.number("rtol", l.rtol);
        s.number("atol", l.atol);
        s.read("divergence", l.divergence, [](const std::string& v) {
            if (v == "exact") return DivergenceMode::Exact;
            if (v == "hutchinson") return DivergenceMode::Hutchinson;
            throw ValidationError("expected exact or hutchinson");
        });
        s.integer("hutchinson_probes", l.hutchinson_probes);
        s.integer("max_steps", l.max_steps);
        s.integer("threads", l.threads);
        config_detail::check(l.rtol > 0.0, problems, "likelihood.rtol", "must be positive");
        config_detail::check(l.atol > 0.0, problems, "likelihood.atol", "must be positive");
        config_detail::check(l.hutchinson_probes >= 1, problems, "likelihood.hutchinson_probes", "must be >= 1");
        config_detail::check(l.max_steps >= 1, problems, "likelihood.max_steps", "must be >= 1");
    }

    {
        Section& s = section("inpaint");
        std::vector<double> observed_dims;
        s.numbers("observed_dims", observed_dims);
        std::vector<double> values;
        s.numbers("values", values);
        s.integer("n_samples", cfg.inpaint.n_samples);
        s.integer("n_steps", cfg.inpaint.n_steps);
        const auto d = static_cast<std::size_t>(cfg.net.input_dim);
        if (s.has("observed_dims") || s.has("values")) {
            if (observed_dims.size() != values.size()) {
                s.fail("values", "must list one value per entry of observed_dims");
            } else {
                cfg.inpaint.mask.assign(d, false);
                cfg.inpaint.observed.assign(d, 0.0);
                for (std::size_t i = 0; i < observed_dims.size(); ++i) {
                    const double k = observed_dims[i];
                    if (k < 0 || k >= static_cast<double>(d) || k != std::floor(k)) {
                        s.fail("observed_dims", "index out of range");
                        continue;
                    }
                    cfg.inpaint.mask[static_cast<std::size_t>(k)] = true;
                    cfg.inpaint.observed[static_cast<std::size_t>(k)] = values[i];
                }
            }
        } else {
            cfg.inpaint.mask.assign(d, false);
            cfg.inpaint.mask[0] = true;
            cfg.inpaint.observed.assign(d, 0.0);
        }
        const auto n_obs = std::count(cfg.inpaint.mask.begin(), cfg.inpaint.mask.end(), true);
        config_detail::check(n_obs >= 1 && n_obs < static_cast<long>(d), problems, "inpaint.observed_dims",
                             "need at least one observed and one free coordinate");
        config_detail::check(cfg.inpaint.n_samples >= 1, problems, "inpaint.n_samples", "must be >= 1");
        config_detail::check(cfg.inpaint.n_steps >= 10, problems, "inpaint.n_steps", "must be >= 10");
    }

    {
        Section& s = section("reconstruct");
        s.number("t_star", cfg.reconstruct.t_star);
        s.integer("n_steps", cfg.reconstruct.n_steps);
        config_detail::check(cfg.reconstruct.t_star >= cfg.sde.t_eps && cfg.reconstruct.t_star <= cfg.sde.T, problems,
                             "reconstruct.t_star", "must lie in [t_eps, T]");
        config_detail::check(cfg.reconstruct.n_steps >= 1, problems, "reconstruct.n_steps", "must be >= 1");
    }

    {
        Section& s = section("eval");
        s.number("field_t", cfg.eval.field_t);
        std::vector<double> rect{cfg.eval.rect.x0, cfg.eval.rect.x1, cfg.eval.rect.y0, cfg.eval.rect.y1};
        s.numbers("rect", rect);
        if (rect.size() == 4 && rect[0] < rect[1] && rect[2] < rect[3]) {
            cfg.eval.rect = {rect[0], rect[1], rect[2], rect[3]};
        } else {
            s.fail("rect", "expected x0, x1, y0, y1 with x0 < x1 and y0 < y1");
        }
        s.integer("resolution", cfg.eval.resolution);
        s.number("ur_threshold", cfg.eval.ur_threshold);
        s.read("reference_checkpoint", cfg.eval.reference_checkpoint,
               [&](const std::string& v) { return std::optional(resolve(v)); });
        config_detail::check(cfg.eval.field_t >= cfg.sde.t_eps && cfg.eval.field_t <= cfg.sde.T, problems,
                             "eval.field_t", "must lie in [t_eps, T]");
        config_detail::check(cfg.eval.resolution >= 2, problems, "eval.resolution", "must be >= 2");
        config_detail::check(cfg.eval.ur_threshold > 0.0 && cfg.eval.ur_threshold < 1.0, problems, "eval.ur_threshold",
                             "must lie in (0, 1)");
    }

    {
        Section& s = section("ablation");
        s.read("param", cfg.ablation.param, [](const std::string& v) {
            if (v == "alpha") return SweepParam::Alpha;
            if (v == "interval") return SweepParam::Interval;
            throw ValidationError("expected alpha or interval");
        });
        s.numbers("values", cfg.ablation.values);
    }

    if (is_finetune(cfg.train.mode) && !cfg.base_checkpoint) {
        problems.push_back("train.base_checkpoint: required for fine-tune modes");
    }

    for (auto& [name, s] : sections) s.check_unknown();
    for (const auto& [k, v] : tree) {
        if (!sections.count(k)) problems.push_back(k + ": unknown section");
    }
    if (!problems.empty()) throw ConfigError(std::move(problems));
    return cfg;
}

inline ExperimentConfig load_config(const std::filesystem::path& path, const ConfigOverrides& over = {}) {
    return parse_config(read_text(path), path.parent_path(), over);
}

/// Canonical INI text for a config; parse_config(config_to_ini(c)) == c field by field.
inline std::string config_to_ini(const ExperimentConfig& c) {
    using config_detail::doubles;
    auto d = [](double v) { return format_double(v); };
    std::string s;
    auto sec = [&](const std::string& name) { s += (s.empty() ? "" : "\n") + std::string("[") + name + "]\n"; };
    auto kv = [&](const std::string& k, const std::string& v) { s += k + " = " + v + "\n"; };

    sec("experiment");
    kv("name", c.name);
    kv("seed", std::to_string(c.seed));
    kv("out_dir", c.out_dir.string());

    sec("mixture");
    kv("preset", "custom");
    kv("components", std::to_string(c.mixture_components.size()));
    for (std::size_t k = 0; k < c.mixture_components.size(); ++k) {
        const auto& m = c.mixture_components[k];
        sec("component" + std::to_string(k));
        kv("weight", d(m.weight));
        kv("mean", doubles(std::vector<double>(m.mean.data(), m.mean.data() + m.mean.size())));
        std::vector<double> cov;
        for (Eigen::Index i = 0; i < m.cov.rows(); ++i)
            for (Eigen::Index j = 0; j < m.cov.cols(); ++j) cov.push_back(m.cov(i, j));
        kv("cov", doubles(cov));
        kv("nsfg", m.nsfg ? "true" : "false");
    }

    sec("sde");
    kv("kind", std::string(to_string(c.sde.kind)));
    kv("T", d(c.sde.T));
    kv("t_eps", d(c.sde.t_eps));
    if (c.sde.kind == SdeKind::VE) {
        kv("sigma_min", d(c.sde.sigma_min));
        kv("sigma_max", d(c.sde.sigma_max));
    } else {
        kv("beta_min", d(c.sde.beta_min));
        kv("beta_max", d(c.sde.beta_max));
    }

    sec("net");
    std::vector<double> widths(c.net.widths.begin(), c.net.widths.end());
    kv("widths", doubles(widths));
    kv("n_freq", std::to_string(c.net.n_freq));

    sec("train");
    kv("mode", std::string(to_string(c.train.mode)));
    kv("alpha", d(c.train.alpha));
    kv("update_interval", std::to_string(c.train.update_interval));
    kv("steps", std::to_string(c.train.steps));
    kv("batch_size", std::to_string(c.train.batch_size));
    kv("learning_rate", d(c.train.learning_rate));
    kv("beta1", d(c.train.beta1));
    kv("beta2", d(c.train.beta2));
    kv("adam_eps", d(c.train.adam_eps));
    kv("lambda", std::string(to_string(c.train.lambda)));
    kv("obtuse_hinge", c.train.obtuse_hinge ? "true" : "false");
    if (c.base_checkpoint) kv("base_checkpoint", c.base_checkpoint->string());

    sec("data");
    kv("n_retain", std::to_string(c.data.n_retain));
    kv("n_forget", std::to_string(c.data.n_forget));
    kv("n_test", std::to_string(c.data.n_test));

    sec("sampler");
    kv("method", c.sampler.method == SamplerMethod::EulerMaruyama ? "em" : "pc");
    kv("n_samples", std::to_string(c.sampler.n_samples));
    kv("n_steps", std::to_string(c.sampler.n_steps));
    kv("snr", d(c.sampler.snr));
    kv("corrector_steps", std::to_string(c.sampler.corrector_steps));

    sec("likelihood");
    kv("rtol", d(c.likelihood.rtol));
    kv("atol", d(c.likelihood.atol));
    kv("divergence", c.likelihood.divergence == DivergenceMode::Exact ? "exact" : "hutchinson");
    kv("hutchinson_probes", std::to_string(c.likelihood.hutchinson_probes));
    kv("max_steps", std::to_string(c.likelihood.max_steps));
    kv("threads", std::to_string(c.likelihood.threads));

    sec("inpaint");
    std::vector<double> dims, vals;
    for (std::size_t i = 0; i < c.inpaint.mask.size(); ++i) {
        if (!c.inpaint.mask[i]) continue;
        dims.push_back(static_cast<double>(i));
        vals.push_back(c.inpaint.observed[i]);
    }
    kv("observed_dims", doubles(dims));
    kv("values", doubles(vals));
    kv("n_samples", std::to_string(c.inpaint.n_samples));
    kv("n_steps", std::to_string(c.inpaint.n_steps));

    sec("reconstruct");
    kv("t_star", d(c.reconstruct.t_star));
    kv("n_steps", std::to_string(c.reconstruct.n_steps));

    sec("eval");
    kv("field_t", d(c.eval.field_t));
    kv("rect", doubles({c.eval.rect.x0, c.eval.rect.x1, c.eval.rect.y0, c.eval.rect.y1}));
    kv("resolution", std::to_string(c.eval.resolution));
    kv("ur_threshold", d(c.eval.ur_threshold));
    if (c.eval.reference_checkpoint) kv("reference_checkpoint", c.eval.reference_checkpoint->string());

    if (!c.ablation.values.empty()) {
        sec("ablation");
        kv("param", c.ablation.param == SweepParam::Alpha ? "alpha" : "interval");
        kv("values", doubles(c.ablation.values));
    }
    return s;
}

} // namespace msgm
