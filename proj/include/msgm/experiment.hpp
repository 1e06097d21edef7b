#pragma once

// End-to-end experiment drivers behind the command-line tool: dataset
// synthesis, training, evaluation, and the ablation sweeps. Every artifact
// lands in cfg.out_dir under names prefixed by cfg.name.

#include "msgm/config.hpp"
#include "msgm/evalbench.hpp"
#include "msgm/io.hpp"
#include "msgm/likelihood.hpp"
#include "msgm/sampler.hpp"
#include "msgm/scorenet.hpp"
#include "msgm/unlearn.hpp"

#include <cstdio>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

namespace msgm {

struct ExperimentData {
    SplitDataset train; ///< D_g / D_f used for fitting
    SplitDataset test;  ///< held-out draws from the same components
};

inline ExperimentData make_data(const ExperimentConfig& cfg) {
    const MixtureSpec mix = cfg.mixture();
    const SeedStreams seeds(cfg.seed);
    RngState rd(seeds.data), rt(seeds.test);
    ExperimentData d;
    d.train.retain = mixture_sample(mix, cfg.data.n_retain, rd, MixtureSplit::SFG);
    d.train.forget = mixture_sample(mix, cfg.data.n_forget, rd, MixtureSplit::NSFG);
    d.test.retain = mixture_sample(mix, cfg.data.n_test, rt, MixtureSplit::SFG);
    d.test.forget = mixture_sample(mix, cfg.data.n_test, rt, MixtureSplit::NSFG);
    return d;
}

/// Hex CRC trailer of the serialized parameters; identifies a checkpoint.
inline std::string checkpoint_id(const ScoreNet& net) {
    const auto buf = encode_checkpoint(net);
    std::uint64_t crc = 0;
    for (int i = 7; i >= 0; --i) crc = (crc << 8) | buf[buf.size() - 8 + static_cast<std::size_t>(i)];
    char hex[17];
    std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(crc));
    return hex;
}

struct ArtifactPaths {
    std::filesystem::path dir;
    std::string name;

    std::filesystem::path operator()(const std::string& suffix) const { return dir / (name + suffix); }
    std::filesystem::path checkpoint() const { return (*this)(".ckpt"); }
    std::filesystem::path loss_csv() const { return (*this)("_loss.csv"); }
};

inline ArtifactPaths artifacts(const ExperimentConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(cfg.out_dir, ec);
    if (ec || !std::filesystem::is_directory(cfg.out_dir)) {
        throw ValidationError("output directory not writable: " + cfg.out_dir.string());
    }
    return {cfg.out_dir, cfg.name};
}

inline ScoreNet load_model(const ExperimentConfig& cfg, const std::filesystem::path& path) {
    ScoreNet net = load_checkpoint(path, cfg.sde);
    if (!(net.arch() == cfg.net)) {
        throw ValidationError("checkpoint " + path.string() + ": architecture does not match the config");
    }
    return net;
}

inline ScoreNet initial_model(const ExperimentConfig& cfg) {
    if (is_finetune(cfg.train.mode)) {
        require(cfg.base_checkpoint.has_value(), "fine-tune modes need train.base_checkpoint");
        return load_model(cfg, *cfg.base_checkpoint);
    }
    return ScoreNet::init(SeedStreams(cfg.seed).init, cfg.net, cfg.sde);
}

inline TrainPlan effective_plan(const ExperimentConfig& cfg) {
    TrainPlan p = cfg.train;
    p.seed = SeedStreams(cfg.seed).train;
    return p;
}

struct TrainOutput {
    ScoreNet net;
    LossCurve curve;
    std::filesystem::path checkpoint;
    std::filesystem::path loss_csv;
};

/// Trains per the config; writes <name>.ckpt, <name>_loss.csv and <name>_loss.svg.
inline TrainOutput run_train(const ExperimentConfig& cfg, std::ostream& log) {
    const ArtifactPaths out = artifacts(cfg);
    const ExperimentData data = make_data(cfg);
    const TrainPlan plan = effective_plan(cfg);
    const long report_every = std::max<long>(1, plan.steps / 10);
    TrainResult res = train(plan, data.train, initial_model(cfg), [&](const LossRecord& r) {
        if ((r.step + 1) % report_every == 0) {
            log << "step " << r.step + 1 << "/" << plan.steps << " L_g " << format_double(r.retain);
            if (r.has_forget()) log << " L_f " << format_double(r.forget);
            log << "\n";
        }
    });
    save_checkpoint(res.net, out.checkpoint());
    write_csv(out.loss_csv(), loss_table(res.curve));
    write_text(out("_loss.svg"), loss_svg(res.curve, cfg.name + " loss"));
    log << "trained " << cfg.name << " mode=" << to_string(plan.mode) << " steps=" << plan.steps
        << " final_L_g=" << format_double(final_retain_loss(res.curve)) << " checkpoint=" << out.checkpoint().string()
        << "\n";
    return {std::move(res.net), std::move(res.curve), out.checkpoint(), out.loss_csv()};
}

inline SampleBatch draw_samples(const ExperimentConfig& cfg, const ScoreNet& net) {
    RngState rng(SeedStreams(cfg.seed).sample);
    SampleBatch b = cfg.sampler.method == SamplerMethod::EulerMaruyama
                        ? reverse_sde_sample(net, cfg.sde, cfg.sampler.n_samples, cfg.sampler.n_steps, rng)
                        : pc_sample(net, cfg.sde, cfg.sampler.n_samples, cfg.sampler.n_steps, cfg.sampler.snr,
                                    cfg.sampler.corrector_steps, rng);
    b.meta.checkpoint_id = checkpoint_id(net);
    return b;
}

inline SampleBatch run_sample(const ExperimentConfig& cfg, const ScoreNet& net, std::ostream& log) {
    const ArtifactPaths out = artifacts(cfg);
    const MixtureSpec mix = cfg.mixture();
    SampleBatch b = draw_samples(cfg, net);
    write_csv(out("_samples.csv"), points_table(b.points));
    write_text(out("_samples.svg"), scatter_svg(b.points, bayes_components(mix, b.points), cfg.eval.rect,
                                                cfg.name + " samples"));
    log << "sampled " << b.points.rows() << " points (" << b.meta.spec_id << ", checkpoint " << b.meta.checkpoint_id
        << ", steps " << b.meta.steps << ") UR=" << format_double(unlearning_ratio(mix, b.points, cfg.eval.ur_threshold))
        << "\n";
    return b;
}

inline IntegratorSettings effective_integrator(const ExperimentConfig& cfg) {
    IntegratorSettings s = cfg.likelihood;
    s.seed = SeedStreams(cfg.seed).nll;
    return s;
}

inline NllReport run_nll(const ExperimentConfig& cfg, const ScoreNet& net, std::ostream& log) {
    const ArtifactPaths out = artifacts(cfg);
    const ExperimentData data = make_data(cfg);
    const NllReport rep = nll_report(net, cfg.sde, data.test.retain, data.test.forget, effective_integrator(cfg));
    write_csv(out("_nll.csv"), nll_table(rep));
    write_csv(out("_nll_summary.csv"), nll_summary_table(cfg.name, rep));
    log << "NLL D_g " << format_double(rep.retain.mean) << " +- " << format_double(rep.retain.std_error) << "  D_f "
        << format_double(rep.forget.mean) << " +- " << format_double(rep.forget.std_error) << "\n";
    return rep;
}

inline ScoreField model_field(const ExperimentConfig& cfg, const ScoreNet& net) {
    return score_field(net, cfg.eval.field_t, cfg.eval.rect, cfg.eval.resolution, cfg.eval.resolution);
}

inline ScoreField run_field(const ExperimentConfig& cfg, const ScoreNet& net, std::ostream& log) {
    const ArtifactPaths out = artifacts(cfg);
    const ScoreField f = model_field(cfg, net);
    write_csv(out("_field.csv"), field_table(f));
    write_text(out("_field.svg"), quiver_svg(f, cfg.name + " score field"));
    const ScoreField truth = score_field(MixtureScore(cfg.mixture(), cfg.sde), cfg.eval.field_t, cfg.eval.rect,
                                         cfg.eval.resolution, cfg.eval.resolution);
    const Alignment bulk = field_alignment(f, truth, sfg_bulk_region(cfg.mixture()));
    log << "field at t=" << format_double(cfg.eval.field_t) << ": mean cosine vs analytic over D_g bulk "
        << format_double(bulk.mean_cosine) << "\n";
    return f;
}

struct InpaintSummary {
    SampleBatch batch;
    double nsfg_fraction; ///< completions Bayes-assigned to an NSFG component
};

inline double nsfg_fraction(const MixtureSpec& mix, const Tensor& pts) {
    const auto labels = bayes_components(mix, pts);
    std::size_t n = 0;
    for (auto k : labels) n += mix.components()[k].nsfg ? 1 : 0;
    return static_cast<double>(n) / static_cast<double>(labels.size());
}

inline InpaintSummary run_inpaint(const ExperimentConfig& cfg, const ScoreNet& net, std::ostream& log) {
    const ArtifactPaths out = artifacts(cfg);
    const MixtureSpec mix = cfg.mixture();
    RngState rng(SeedStreams(cfg.seed).inpaint);
    const Eigen::Map<const Eigen::RowVectorXd> observed(cfg.inpaint.observed.data(),
                                                         static_cast<Eigen::Index>(cfg.inpaint.observed.size()));
    SampleBatch b = inpaint(net, cfg.sde, observed, cfg.inpaint.mask, cfg.inpaint.n_samples, cfg.inpaint.n_steps, rng);
    b.meta.checkpoint_id = checkpoint_id(net);
    write_csv(out("_inpaint.csv"), points_table(b.points));
    write_text(out("_inpaint.svg"),
               scatter_svg(b.points, bayes_components(mix, b.points), cfg.eval.rect, cfg.name + " inpainting"));
    const double frac = nsfg_fraction(mix, b.points);
    log << "inpainted " << b.points.rows() << " points, NSFG fraction " << format_double(frac) << "\n";
    return {std::move(b), frac};
}

struct ReconstructSummary {
    double retain_preserved;  ///< D_g test points keeping their Bayes component
    double forget_still_nsfg; ///< D_f test points still assigned to an NSFG component
};

inline ReconstructSummary run_reconstruct(const ExperimentConfig& cfg, const ScoreNet& net, std::ostream& log) {
    const ArtifactPaths out = artifacts(cfg);
    const MixtureSpec mix = cfg.mixture();
    const ExperimentData data = make_data(cfg);
    RngState rng(SeedStreams(cfg.seed).reconstruct);
    const Tensor rg = reconstruct(net, cfg.sde, data.test.retain, cfg.reconstruct.t_star, rng, cfg.reconstruct.n_steps);
    const Tensor rf = reconstruct(net, cfg.sde, data.test.forget, cfg.reconstruct.t_star, rng, cfg.reconstruct.n_steps);

    CsvTable t{{"split", "point_id"}, {}};
    const Eigen::Index d = rg.cols();
    for (Eigen::Index i = 0; i < d; ++i) t.header.push_back("x" + std::to_string(i));
    for (Eigen::Index i = 0; i < d; ++i) t.header.push_back("r" + std::to_string(i));
    t.header.insert(t.header.end(), {"component_before", "component_after"});

    std::size_t kept = 0, still = 0;
    auto emit = [&](const char* split, const Tensor& x, const Tensor& r, bool retain) {
        const auto before = bayes_components(mix, x), after = bayes_components(mix, r);
        for (Eigen::Index k = 0; k < x.rows(); ++k) {
            std::vector<std::string> row{split, std::to_string(k)};
            for (Eigen::Index i = 0; i < d; ++i) row.push_back(format_double(x(k, i)));
            for (Eigen::Index i = 0; i < d; ++i) row.push_back(format_double(r(k, i)));
            const auto b = before[static_cast<std::size_t>(k)], a = after[static_cast<std::size_t>(k)];
            row.push_back(std::to_string(b));
            row.push_back(std::to_string(a));
            t.rows.push_back(std::move(row));
            if (retain && a == b) ++kept;
            if (!retain && mix.components()[a].nsfg) ++still;
        }
    };
    emit("D_g", data.test.retain, rg, true);
    emit("D_f", data.test.forget, rf, false);
    write_csv(out("_reconstruct.csv"), t);
    const ReconstructSummary s{static_cast<double>(kept) / static_cast<double>(rg.rows()),
                               static_cast<double>(still) / static_cast<double>(rf.rows())};
    log << "reconstruction at t*=" << format_double(cfg.reconstruct.t_star) << ": D_g preserved "
        << format_double(s.retain_preserved) << ", D_f still NSFG " << format_double(s.forget_still_nsfg) << "\n";
    return s;
}

struct EvalOutput {
    ResultRow row;
    Eigen::VectorXd mode_weights;
};

/// Samples, NLL, field and figures for one checkpoint; writes <name>_results.csv.
/// When eval.reference_checkpoint is set, field alignment against it is
/// reported in <name>_alignment.csv.
inline EvalOutput run_eval(const ExperimentConfig& cfg, const ScoreNet& net, std::ostream& log) {
    const ArtifactPaths out = artifacts(cfg);
    const MixtureSpec mix = cfg.mixture();
    const SampleBatch b = run_sample(cfg, net, log);
    const NllReport rep = run_nll(cfg, net, log);
    const ScoreField f = run_field(cfg, net, log);
    if (std::filesystem::exists(out.loss_csv())) {
        write_text(out("_loss.svg"), loss_svg(loss_from_table(read_csv(out.loss_csv())), cfg.name + " loss"));
    }
    if (cfg.eval.reference_checkpoint) {
        const ScoreNet ref = load_model(cfg, *cfg.eval.reference_checkpoint);
        const ScoreField fr = model_field(cfg, ref);
        const Alignment center = field_alignment(f, fr, nsfg_region(mix));
        const Alignment bulk = field_alignment(f, fr, sfg_bulk_region(mix));
        CsvTable t{{"region", "mean_cosine", "fraction_negative", "nodes_used"}, {}};
        t.add({"nsfg", format_double(center.mean_cosine), format_double(center.fraction_negative),
               std::to_string(center.nodes_used)});
        t.add({"sfg_bulk", format_double(bulk.mean_cosine), format_double(bulk.fraction_negative),
               std::to_string(bulk.nodes_used)});
        write_csv(out("_alignment.csv"), t);
        log << "alignment vs reference: NSFG disk " << format_double(center.mean_cosine) << ", D_g bulk "
            << format_double(bulk.mean_cosine) << "\n";
    }
    const ResultRow row{cfg.name, unlearning_ratio(mix, b.points, cfg.eval.ur_threshold), rep.retain.mean,
                        rep.forget.mean};
    write_csv(out("_results.csv"), results_table({row}));
    return {row, mode_weights(mix, b.points)};
}

struct AblationRow {
    double value;
    ResultRow result;
    double final_retain;
    std::string status;
};

inline std::string ablation_label(SweepParam p, double v) {
    return (p == SweepParam::Alpha ? std::string("alpha_") : std::string("interval_")) + format_double(v);
}

/// One training run plus evaluation per sweep value, all from the same base
/// seed. A failing run is recorded and the sweep continues; the first failure
/// is rethrown after the aggregated CSV is written.
inline std::vector<AblationRow> run_ablation(const ExperimentConfig& cfg, std::ostream& log) {
    require(!cfg.ablation.values.empty(), "ablation: sweep values must be non-empty");
    const ArtifactPaths out = artifacts(cfg);
    std::vector<AblationRow> rows;
    std::exception_ptr first_error;
    for (double v : cfg.ablation.values) {
        ExperimentConfig c = cfg;
        c.name = cfg.name + "_" + ablation_label(cfg.ablation.param, v);
        if (cfg.ablation.param == SweepParam::Alpha) {
            c.train.alpha = v;
        } else {
            c.train.update_interval = static_cast<int>(v);
        }
        AblationRow row{v, {c.name, NAN, NAN, NAN}, NAN, "ok"};
        try {
            require(cfg.ablation.param != SweepParam::Interval || (v >= 1 && v == std::floor(v)),
                    "ablation: interval values must be positive integers");
            c.train.validate();
            log << "== " << c.name << "\n";
            TrainOutput tr = run_train(c, log);
            row.final_retain = final_retain_loss(tr.curve);
            row.result = run_eval(c, tr.net, log).row;
        } catch (const std::exception& e) {
            row.status = std::string("failed: ") + e.what();
            for (char& ch : row.status) {
                if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
            }
            if (!first_error) first_error = std::current_exception();
            log << c.name << " " << row.status << "\n";
        }
        rows.push_back(row);
    }
    CsvTable t{{cfg.ablation.param == SweepParam::Alpha ? "alpha" : "interval", "UR", "NLL_Dg", "NLL_Df", "final_L_g",
                "status"},
               {}};
    for (const auto& r : rows) {
        t.add({format_double(r.value), format_double(r.result.ur), format_double(r.result.nll_g),
               format_double(r.result.nll_f), format_double(r.final_retain), r.status});
    }
    write_csv(out("_ablation.csv"), t);
    if (first_error) std::rethrow_exception(first_error);
    return rows;
}

} // namespace msgm
