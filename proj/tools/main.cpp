// Command-line front end: data generation, training, evaluation, ablation
// sweeps, and the analysis table emitters.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "sgstereo/distributions.hpp"
#include "sgstereo/io.hpp"
#include "sgstereo/losses.hpp"
#include "sgstereo/pipeline.hpp"
#include "sgstereo/regression.hpp"

namespace fs = std::filesystem;
using namespace sgstereo;

namespace {

std::string fmt(double v) { return io::format_double(v); }

void print_summary(const std::string& command, std::uint64_t seed,
                   const std::optional<Metrics>& m) {
    std::cout << command << "\t" << seed << "\t" << (m ? fmt(m->epe) : "-") << "\t"
              << (m ? fmt(m->d1) : "-") << "\n";
}

std::vector<std::string> split_csv_list(const std::string& text) {
    std::vector<std::string> out;
    for (size_t pos = 0; pos < text.size();) {
        const size_t comma = text.find(',', pos);
        out.push_back(text.substr(pos, comma - pos));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

/// Common per-command state: config resolution, output directory, manifest.
struct RunContext {
    TrainConfig cfg;
    fs::path out_dir;
    io::RunManifest manifest;

    void add_output(const fs::path& path) {
        manifest.outputs.emplace_back(path.string(), io::git_blob_sha1_file(path));
    }

    void finish(const std::string& command, const std::optional<Metrics>& metrics) {
        manifest.command = command;
        manifest.seed = cfg.seed;
        manifest.config = cfg;
        if (metrics) {
            manifest.metrics["epe"] = metrics->epe;
            manifest.metrics["d1"] = metrics->d1;
            manifest.metrics["err_gt1"] = metrics->err_gt1;
            manifest.metrics["err_gt2"] = metrics->err_gt2;
            manifest.metrics["err_gt3"] = metrics->err_gt3;
        }
        io::write_manifest(manifest, out_dir / "manifest.json");
        print_summary(command, cfg.seed, metrics);
    }
};

struct CommonFlags {
    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
};

void attach_common(CLI::App* cmd, CommonFlags& common) {
    cmd->add_option("--config", common.config_path, "training config file (flat key = value)");
    cmd->add_option("--out-dir", common.out_dir, "directory for all written artifacts");
    cmd->add_option("--seed", common.seed, "seed override")
        ->each([&common](const std::string&) { common.seed_set = true; });
}

RunContext make_context(const CommonFlags& common) {
    RunContext ctx;
    if (!common.config_path.empty()) ctx.cfg = io::load_config(common.config_path);
    if (common.seed_set) ctx.cfg.seed = common.seed;
    ctx.out_dir = common.out_dir;
    fs::create_directories(ctx.out_dir);
    return ctx;
}

const std::vector<std::string> kMetricHeader = {"epe",     "d1",           "err_gt1",
                                                "err_gt2", "err_gt3",      "valid_pixels",
                                                "total_pixels"};

std::vector<std::string> metric_cells(const Metrics& m) {
    return {fmt(m.epe),     fmt(m.d1),      fmt(m.err_gt1),
            fmt(m.err_gt2), fmt(m.err_gt3), std::to_string(m.valid_pixels),
            std::to_string(m.total_pixels)};
}

int cmd_gen_data(const CommonFlags& common, int count, const std::string& scene) {
    RunContext ctx = make_context(common);
    if (!scene.empty()) ctx.cfg.train_scene = scene_from_string(scene);
    SceneParams params;
    params.height = ctx.cfg.height;
    params.width = ctx.cfg.width;
    params.d_max = ctx.cfg.d_max;
    params.kind = ctx.cfg.train_scene;
    params.texture_period = ctx.cfg.texture_period;

    for (int i = 0; i < count; ++i) {
        const StereoSample s =
            generate_stereo_sample(params, ctx.cfg.seed * 9176 + static_cast<std::uint64_t>(i));
        char name[64];
        const auto save_image = [&](const char* tag, const std::vector<double>& img) {
            DisparityMap as_map;
            as_map.height = s.height;
            as_map.width = s.width;
            as_map.values = img;
            as_map.valid.assign(img.size(), 1);
            std::snprintf(name, sizeof(name), "sample_%03d_%s.pfm", i, tag);
            io::write_pfm(as_map, ctx.out_dir / name);
            ctx.add_output(ctx.out_dir / name);
        };
        save_image("left", s.left);
        save_image("right", s.right);
        std::snprintf(name, sizeof(name), "sample_%03d_gt.pfm", i);
        io::write_pfm(s.gt, ctx.out_dir / name);
        ctx.add_output(ctx.out_dir / name);
    }
    ctx.finish("gen-data", std::nullopt);
    return 0;
}

int cmd_train(const CommonFlags& common) {
    RunContext ctx = make_context(common);
    ctx.cfg.validate();

    const std::vector<StereoSample> dataset = make_training_set(ctx.cfg);
    TrainResult result = train(ctx.cfg, dataset);

    // history.csv: loss every epoch, metrics at eval epochs
    std::vector<std::vector<std::string>> rows;
    for (const EpochRecord& r : result.history) {
        std::vector<std::string> row = {std::to_string(r.epoch), fmt(r.train_loss),
                                        fmt(r.mean_tv)};
        row.push_back(r.eval ? fmt(r.eval->epe) : "");
        row.push_back(r.eval ? fmt(r.eval->d1) : "");
        rows.push_back(std::move(row));
    }
    io::write_csv({"epoch", "train_loss", "mean_tv", "epe", "d1"}, rows,
                  ctx.out_dir / "history.csv");
    ctx.add_output(ctx.out_dir / "history.csv");

    io::write_weights(result.model, ctx.out_dir / "weights.bin");
    ctx.add_output(ctx.out_dir / "weights.bin");

    const std::vector<StereoSample> eval_set = make_eval_set(ctx.cfg);
    for (size_t i = 0; i < eval_set.size(); ++i) {
        DisparityMap pred = predict_disparity(result.model, eval_set[i], ctx.cfg);
        char name[64];
        std::snprintf(name, sizeof(name), "eval_%03zu.pfm", i);
        io::write_pfm(pred, ctx.out_dir / name);
        ctx.add_output(ctx.out_dir / name);
    }

    ctx.finish("train", result.final_metrics);
    return 0;
}

int cmd_eval(const CommonFlags& common, const std::string& weights_path) {
    RunContext ctx = make_context(common);
    ctx.cfg.validate();
    RefinerModel model = io::read_weights(weights_path);
    if (model.bins != ctx.cfg.grid().bins())
        throw std::runtime_error("eval: weights were trained for " + std::to_string(model.bins) +
                                 " bins, config expects " +
                                 std::to_string(ctx.cfg.grid().bins()));

    const std::vector<StereoSample> eval_set = make_eval_set(ctx.cfg);
    const Metrics m = evaluate(model, eval_set, ctx.cfg);

    io::write_csv(kMetricHeader, {metric_cells(m)}, ctx.out_dir / "metrics.csv");
    ctx.add_output(ctx.out_dir / "metrics.csv");

    for (size_t i = 0; i < eval_set.size(); ++i) {
        DisparityMap pred = predict_disparity(model, eval_set[i], ctx.cfg);
        char name[64];
        std::snprintf(name, sizeof(name), "eval_%03zu.pfm", i);
        io::write_pfm(pred, ctx.out_dir / name);
        ctx.add_output(ctx.out_dir / name);
    }
    ctx.finish("eval", m);
    return 0;
}

int cmd_ablate(const CommonFlags& common, const std::string& axis_name,
               std::string values_csv, int seeds, int jobs) {
    RunContext ctx = make_context(common);
    const AblationAxis axis = ablation_axis_from_string(axis_name);
    if (values_csv.empty()) {
        switch (axis) {
            case AblationAxis::Sigma: values_csv = "0.3,0.5,1.0"; break;
            case AblationAxis::Lambda: values_csv = "0.2,0.5,1.0"; break;
            case AblationAxis::DExt: values_csv = "0,16"; break;
            case AblationAxis::LossMode: values_csv = "ce,l1,l1_cos"; break;
            case AblationAxis::UpsampleMode: values_csv = "bilinear,trilinear"; break;
        }
    }
    const std::vector<std::string> values = split_csv_list(values_csv);
    const AblationResult result = run_ablation(axis, values, ctx.cfg, seeds, jobs);

    std::vector<std::vector<std::string>> rows;
    for (const AblationCell& cell : result.cells) {
        std::vector<std::string> row = {cell.value, std::to_string(cell.seed)};
        const auto cells = metric_cells(cell.metrics);
        row.insert(row.end(), cells.begin(), cells.end());
        row.push_back(fmt(cell.final_train_loss));
        rows.push_back(std::move(row));
    }
    for (const auto& [value, m] : result.means) {
        std::vector<std::string> row = {value, "mean"};
        const auto cells = metric_cells(m);
        row.insert(row.end(), cells.begin(), cells.end());
        row.push_back("");
        rows.push_back(std::move(row));
    }
    std::vector<std::string> header = {to_string(axis), "seed"};
    header.insert(header.end(), kMetricHeader.begin(), kMetricHeader.end());
    header.push_back("final_train_loss");
    const std::string csv_name = "ablation_" + to_string(axis) + ".csv";
    io::write_csv(header, rows, ctx.out_dir / csv_name);
    ctx.add_output(ctx.out_dir / csv_name);

    for (const AblationCell& cell : result.cells)
        print_summary("ablate[" + to_string(axis) + "=" + cell.value + "]", cell.seed,
                      cell.metrics);
    ctx.finish("ablate", std::nullopt);
    return 0;
}

int cmd_analyze_gradient(const CommonFlags& common, int bins, const std::string& dist,
                         double sigma) {
    RunContext ctx = make_context(common);
    const DisparityGrid grid(0, bins, 1);
    std::vector<double> z(static_cast<size_t>(bins), 0.0);
    if (dist == "uniform") {
        // all zeros already
    } else if (dist == "gaussian") {
        const TargetDistribution t = sample_gaussian_target((bins - 1) / 2.0, sigma, grid);
        for (int i = 0; i < bins; ++i)
            z[static_cast<size_t>(i)] =
                std::log(std::max(t.probs[static_cast<size_t>(i)], 1e-300));
    } else if (dist == "onehot") {
        z.assign(static_cast<size_t>(bins), -40.0);
        z[static_cast<size_t>(bins / 2)] = 0.0;
    } else if (dist == "bimodal") {
        z.assign(static_cast<size_t>(bins), -40.0);
        z[static_cast<size_t>(bins / 4)] = 0.0;
        z[static_cast<size_t>(3 * bins / 4)] = 0.0;
    } else {
        throw std::runtime_error("analyze-gradient: unknown --dist " + dist);
    }

    const auto profile = gradient_bias_profile(z, grid);
    std::vector<std::vector<std::string>> rows;
    for (const auto& e : profile) rows.push_back({fmt(e.distance), fmt(e.magnitude)});
    io::write_csv({"distance", "magnitude"}, rows, ctx.out_dir / "gradient_profile.csv");
    ctx.add_output(ctx.out_dir / "gradient_profile.csv");
    ctx.finish("analyze-gradient", std::nullopt);
    return 0;
}

int cmd_analyze_truncation(const CommonFlags& common, double mu, double mu_end,
                           const std::string& sigmas_csv, int lo, int hi) {
    RunContext ctx = make_context(common);
    std::vector<std::vector<std::string>> rows;
    for (const std::string& stext : split_csv_list(sigmas_csv)) {
        const double s = std::stod(stext);
        for (double m = mu; m <= mu_end + 1e-12; m += 1.0) {
            const TruncationReport r = truncation_analysis(m, s, lo, hi);
            rows.push_back({fmt(m), fmt(s), fmt(r.mass_deficit), fmt(r.expectation_shift)});
        }
    }
    io::write_csv({"mu", "sigma", "mass_deficit", "expectation_shift"}, rows,
                  ctx.out_dir / "truncation.csv");
    ctx.add_output(ctx.out_dir / "truncation.csv");
    ctx.finish("analyze-truncation", std::nullopt);
    return 0;
}

int cmd_analyze_landscape(const CommonFlags& common, double mu, double sigma, int bins,
                          int rows_n, double lambda) {
    RunContext ctx = make_context(common);
    const DisparityGrid grid(0, bins, 1);
    const TargetDistribution q = sample_gaussian_target(mu, sigma, grid);
    LandscapeSpec spec;
    spec.random_rows = rows_n;
    spec.lambda = lambda;
    spec.seed = ctx.cfg.seed;
    const auto table = loss_landscape_scan(q, grid, spec);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : table) rows.push_back({fmt(r.l1), fmt(r.combined), fmt(r.epe)});
    io::write_csv({"l1", "combined", "epe"}, rows, ctx.out_dir / "landscape.csv");
    ctx.add_output(ctx.out_dir / "landscape.csv");
    ctx.finish("analyze-landscape", std::nullopt);
    return 0;
}

int cmd_analyze_upsample(const CommonFlags& common, const std::string& sigmas_csv, int factor,
                         int knots, double mu) {
    RunContext ctx = make_context(common);
    const int n = (knots - 1) * factor + 1;
    const DisparityGrid grid(0, n, 1);
    std::vector<std::vector<std::string>> rows;
    for (const std::string& stext : split_csv_list(sigmas_csv)) {
        const double s = std::stod(stext);
        const TargetDistribution q = sample_gaussian_target(mu, s, grid);
        const double gap = piecewise_linear_fit_gap(q, factor);
        rows.push_back({fmt(s), fmt(mu), std::to_string(factor), fmt(gap)});
    }
    io::write_csv({"sigma", "mu", "factor", "fit_gap"}, rows, ctx.out_dir / "upsample_gap.csv");
    ctx.add_output(ctx.out_dir / "upsample_gap.csv");
    ctx.finish("analyze-upsample", std::nullopt);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"distribution-supervised stereo disparity regression toolkit"};
    app.require_subcommand(1);

    CommonFlags common;

    auto* gen = app.add_subcommand("gen-data", "write synthetic stereo samples as PFM files");
    int gen_count = 4;
    std::string gen_scene;
    attach_common(gen, common);
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--scene", gen_scene, "standard | ambiguous | endpoint");

    auto* tr = app.add_subcommand("train", "train the refiner on synthetic data");
    attach_common(tr, common);

    auto* ev = app.add_subcommand("eval", "evaluate saved weights on the eval split");
    std::string weights_path;
    attach_common(ev, common);
    ev->add_option("--weights", weights_path, "weights file from train")->required();

    auto* ab = app.add_subcommand("ablate", "sweep one config axis (train + eval per cell)");
    std::string axis_name, values_csv;
    int seeds = 3, jobs = 1;
    attach_common(ab, common);
    ab->add_option("--axis", axis_name, "sigma | lambda | d_ext | loss_mode | upsample_mode")
        ->required();
    ab->add_option("--values", values_csv, "comma-separated axis values");
    ab->add_option("--seeds", seeds, "seeds per value");
    ab->add_option("--jobs", jobs, "parallel training jobs");

    auto* ag = app.add_subcommand("analyze-gradient",
                                  "soft-argmax gradient magnitude vs distance profile");
    int ag_bins = 48;
    std::string ag_dist = "uniform";
    double ag_sigma = 2.0;
    attach_common(ag, common);
    ag->add_option("--bins", ag_bins, "number of disparity bins");
    ag->add_option("--dist", ag_dist, "uniform | gaussian | onehot | bimodal");
    ag->add_option("--sigma", ag_sigma, "sigma of the gaussian profile");

    auto* at = app.add_subcommand("analyze-truncation",
                                  "endpoint mass deficit and expectation shift");
    double at_mu = 0.0, at_mu_end = 5.0;
    std::string at_sigmas = "0.5";
    int at_lo = 0, at_hi = 47;
    attach_common(at, common);
    at->add_option("--mu", at_mu, "first center");
    at->add_option("--mu-end", at_mu_end, "last center (step 1)");
    at->add_option("--sigma", at_sigmas, "comma-separated sigma list");
    at->add_option("--lo", at_lo, "support start");
    at->add_option("--hi", at_hi, "support end");

    auto* al = app.add_subcommand("analyze-landscape",
                                  "loss landscape rows (l1, combined, epe)");
    double al_mu = 20.0, al_sigma = 0.5, al_lambda = 0.5;
    int al_bins = 48, al_rows = 64;
    attach_common(al, common);
    al->add_option("--mu", al_mu, "target center (bin units)");
    al->add_option("--sigma", al_sigma, "target sigma");
    al->add_option("--bins", al_bins, "bins");
    al->add_option("--rows", al_rows, "random rows after the fixed family");
    al->add_option("--lambda", al_lambda, "cosine weight");

    auto* au = app.add_subcommand("analyze-upsample",
                                  "piecewise-linear representability gap of sharp targets");
    std::string au_sigmas = "0.5,1.0,2.0";
    int au_factor = 4, au_knots = 4;
    double au_mu = 6.0;
    attach_common(au, common);
    au->add_option("--sigma", au_sigmas, "comma-separated sigma list");
    au->add_option("--factor", au_factor, "upsampling factor");
    au->add_option("--knots", au_knots, "coarse knot count");
    au->add_option("--mu", au_mu, "target center on the fine axis");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) return cmd_gen_data(common, gen_count, gen_scene);
        if (tr->parsed()) return cmd_train(common);
        if (ev->parsed()) return cmd_eval(common, weights_path);
        if (ab->parsed()) return cmd_ablate(common, axis_name, values_csv, seeds, jobs);
        if (ag->parsed()) return cmd_analyze_gradient(common, ag_bins, ag_dist, ag_sigma);
        if (at->parsed())
            return cmd_analyze_truncation(common, at_mu, at_mu_end, at_sigmas, at_lo, at_hi);
        if (al->parsed())
            return cmd_analyze_landscape(common, al_mu, al_sigma, al_bins, al_rows, al_lambda);
        if (au->parsed())
            return cmd_analyze_upsample(common, au_sigmas, au_factor, au_knots, au_mu);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
