#include "sgstereo/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "sgstereo/distributions.hpp"
#include "sgstereo/rng.hpp"

namespace sgstereo {

std::string to_string(LossMode m) {
    switch (m) {
        case LossMode::SmoothL1SoftArgmax: return "smooth_l1_softargmax";
        case LossMode::CrossEntropy: return "ce";
        case LossMode::L1: return "l1";
        case LossMode::L1Cos: return "l1_cos";
    }
    return "?";
}
std::string to_string(UpsampleMode m) {
    return m == UpsampleMode::Bilinear ? "bilinear" : "trilinear";
}
std::string to_string(SceneKind k) {
    switch (k) {
        case SceneKind::Standard: return "standard";
        case SceneKind::Ambiguous: return "ambiguous";
        case SceneKind::Endpoint: return "endpoint";
    }
    return "?";
}

LossMode loss_mode_from_string(const std::string& s) {
    if (s == "smooth_l1_softargmax") return LossMode::SmoothL1SoftArgmax;
    if (s == "ce") return LossMode::CrossEntropy;
    if (s == "l1") return LossMode::L1;
    if (s == "l1_cos") return LossMode::L1Cos;
    throw std::invalid_argument("unknown loss_mode: " + s);
}
UpsampleMode upsample_mode_from_string(const std::string& s) {
    if (s == "bilinear") return UpsampleMode::Bilinear;
    if (s == "trilinear") return UpsampleMode::Trilinear;
    throw std::invalid_argument("unknown upsample_mode: " + s);
}
SceneKind scene_from_string(const std::string& s) {
    if (s == "standard") return SceneKind::Standard;
    if (s == "ambiguous") return SceneKind::Ambiguous;
    if (s == "endpoint") return SceneKind::Endpoint;
    throw std::invalid_argument("unknown scene: " + s);
}

void TrainConfig::validate() const {
    grid().validate();  // d_max/d_ext/stride consistency
    if (sigma <= 0.0 || !std::isfinite(sigma))
        throw std::invalid_argument("TrainConfig: sigma must be > 0");
    if (!std::isfinite(lambda)) throw std::invalid_argument("TrainConfig: lambda must be finite");
    if (lr <= 0.0) throw std::invalid_argument("TrainConfig: lr must be > 0");
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (train_samples < 1 || eval_samples < 1)
        throw std::invalid_argument("TrainConfig: needs at least one sample per split");
    if (height % (4 * 4) != 0 || width % (4 * 4) != 0)
        throw std::invalid_argument("TrainConfig: height/width must be multiples of 16");
    if (stride != 4)
        throw std::invalid_argument("TrainConfig: the matching volume is quarter-resolution; stride must be 4");
    if (batch_size < 0) throw std::invalid_argument("TrainConfig: batch_size must be >= 0");
    if (eval_every < 1) throw std::invalid_argument("TrainConfig: eval_every must be >= 1");
}

RefinerModel::RefinerModel(int bins_, int hidden_, std::uint64_t init_seed)
    : bins(bins_), hidden(hidden_) {
    using ad::Shape;
    w1 = ad::Parameter("w1", Shape{static_cast<size_t>(hidden), static_cast<size_t>(bins), 3, 3});
    b1 = ad::Parameter("b1", Shape{static_cast<size_t>(hidden)});
    w2 = ad::Parameter("w2", Shape{static_cast<size_t>(bins), static_cast<size_t>(hidden), 3, 3});
    b2 = ad::Parameter("b2", Shape{static_cast<size_t>(bins)});
    tau = ad::Parameter("tau", Shape{1});

    Rng rng(init_seed + 0x9e3779b97f4a7c15ull);
    const double s1 = 0.1 / std::sqrt(static_cast<double>(bins) * 9.0);
    for (double& v : w1.value) v = rng.normal() * s1;
    const double s2 = 0.1 / std::sqrt(static_cast<double>(hidden) * 9.0);
    for (double& v : w2.value) v = rng.normal() * s2;
    tau.value[0] = 6.0;
}

std::vector<ad::Parameter*> RefinerModel::parameters() { return {&w1, &b1, &w2, &b2, &tau}; }

std::size_t RefinerModel::parameter_count() const {
    return w1.value.size() + b1.value.size() + w2.value.size() + b2.value.size() +
           tau.value.size();
}

std::uint64_t train_sample_seed(const TrainConfig& cfg, int index) {
    return 1000 + cfg.seed * 9176 + static_cast<std::uint64_t>(index);
}
std::uint64_t eval_sample_seed(const TrainConfig& cfg, int index) {
    // fixed split per scene kind; never depends on the training seed
    return 500000 + 1000 * static_cast<std::uint64_t>(cfg.eval_scene) +
           static_cast<std::uint64_t>(index);
}

namespace {

SceneParams scene_params(const TrainConfig& cfg, SceneKind kind) {
    SceneParams p;
    p.height = cfg.height;
    p.width = cfg.width;
    p.d_max = cfg.d_max;
    p.kind = kind;
    p.texture_period = cfg.texture_period;
    return p;
}

}  // namespace

std::vector<StereoSample> make_training_set(const TrainConfig& cfg) {
    std::vector<StereoSample> out;
    out.reserve(static_cast<size_t>(cfg.train_samples));
    for (int i = 0; i < cfg.train_samples; ++i)
        out.push_back(generate_stereo_sample(scene_params(cfg, cfg.train_scene),
                                             train_sample_seed(cfg, i)));
    return out;
}

std::vector<StereoSample> make_eval_set(const TrainConfig& cfg) {
    std::vector<StereoSample> out;
    out.reserve(static_cast<size_t>(cfg.eval_samples));
    for (int i = 0; i < cfg.eval_samples; ++i)
        out.push_back(generate_stereo_sample(scene_params(cfg, cfg.eval_scene),
                                             eval_sample_seed(cfg, i)));
    return out;
}

namespace {

/// Disparity grid of the distribution the model actually emits: the coarse
/// grid for bilinear upsampling, the knot-refined grid for trilinear.
DisparityGrid output_grid(const TrainConfig& cfg) {
    const DisparityGrid g = cfg.grid();
    return cfg.upsample_mode == UpsampleMode::Trilinear ? refined_grid(g, 4) : g;
}

struct SampleGraph {
    ad::Tape tape;
    ad::Value loss;
    ad::Value probs;       ///< [D, H, W] after upsampling + softmax
    const StereoSample* sample = nullptr;
    std::vector<double> target;        ///< per-pixel target field (empty for smooth-l1)
    std::vector<std::uint8_t> mask;    ///< valid supervision pixels
    double valid_count = 0.0;
};

/// Builds the full forward graph for one sample. The tape is rebuilt never;
/// forward() re-reads parameter values each step.
SampleGraph build_graph(RefinerModel& model, const StereoSample& sample,
                        const TrainConfig& cfg) {
    const DisparityGrid coarse = cfg.grid();
    const DisparityGrid out_grid = output_grid(cfg);
    const CostVolume vol = compute_matching_cost(sample, coarse);
    const int bins = coarse.bins();
    const int Hq = vol.height, Wq = vol.width;

    SampleGraph g;
    g.sample = &sample;

    ad::Value x = g.tape.constant(
        ad::Shape{static_cast<size_t>(bins), static_cast<size_t>(Hq), static_cast<size_t>(Wq)},
        vol.data);
    ad::Value h1 = g.tape.conv2d_3x3(x, g.tape.param(model.w1), g.tape.param(model.b1));
    ad::Value r1 = g.tape.relu(h1);
    ad::Value h2 = g.tape.conv2d_3x3(r1, g.tape.param(model.w2), g.tape.param(model.b2));
    ad::Value logits = g.tape.add(g.tape.scale_by(x, g.tape.param(model.tau)), h2);

    if (cfg.upsample_mode == UpsampleMode::Trilinear) logits = g.tape.upsample_bins(logits, 4);
    logits = g.tape.upsample_spatial(logits, 4);
    g.probs = g.tape.softmax_bins(logits);

    // supervision at full resolution
    if (cfg.loss_mode == LossMode::SmoothL1SoftArgmax) {
        g.mask = sample.gt.valid;
        ad::Value pred = g.tape.bin_expect(g.probs, out_grid.bin_values());
        g.loss = g.tape.masked_smooth_l1_mean(pred, sample.gt.values, g.mask);
    } else {
        ProbabilityField field = build_target_field(sample.gt.values, sample.gt.valid,
                                                    sample.height, sample.width, cfg.sigma,
                                                    out_grid);
        g.mask = field.valid;
        g.target = std::move(field.probs);
        switch (cfg.loss_mode) {
            case LossMode::CrossEntropy:
                g.loss = g.tape.masked_ce_mean(g.probs, g.target, g.mask);
                break;
            case LossMode::L1:
                g.loss = g.tape.masked_vec_l1_mean(g.probs, g.target, g.mask);
                break;
            case LossMode::L1Cos: {
                ad::Value l1 = g.tape.masked_vec_l1_mean(g.probs, g.target, g.mask);
                ad::Value nc = g.tape.masked_negcos_mean(g.probs, g.target, g.mask);
                g.loss = g.tape.add(l1, g.tape.scale(nc, cfg.lambda));
                break;
            }
            default: break;
        }
    }
    for (auto m : g.mask) g.valid_count += m ? 1.0 : 0.0;
    return g;
}

/// Mean total-variation distance between the emitted distribution and the
/// target field over valid pixels (0 when no field exists).
double mean_total_variation(const SampleGraph& g) {
    if (g.target.empty() || g.valid_count == 0.0) return 0.0;
    const auto& p = g.tape.value_of(g.probs);
    const auto& shape = g.tape.shape_of(g.probs);
    const size_t D = shape[0];
    const size_t N = shape.total() / D;
    double acc = 0.0;
    for (size_t col = 0; col < N; ++col) {
        if (!g.mask[col]) continue;
        double tv = 0.0;
        for (size_t d = 0; d < D; ++d) tv += std::abs(p[d * N + col] - g.target[d * N + col]);
        acc += 0.5 * tv;
    }
    return acc / g.valid_count;
}

struct AdamWState {
    std::vector<std::vector<double>> m, v;
    long step = 0;

    explicit AdamWState(std::vector<ad::Parameter*>& params) {
        for (auto* p : params) {
            m.emplace_back(p->value.size(), 0.0);
            v.emplace_back(p->value.size(), 0.0);
        }
    }

    void update(std::vector<ad::Parameter*>& params, double lr, double beta1, double beta2,
                double weight_decay, double grad_scale) {
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        constexpr double kEps = 1e-8;
        for (size_t pi = 0; pi < params.size(); ++pi) {
            ad::Parameter& p = *params[pi];
            for (size_t i = 0; i < p.value.size(); ++i) {
                const double gr = p.grad[i] * grad_scale;
                m[pi][i] = beta1 * m[pi][i] + (1.0 - beta1) * gr;
                v[pi][i] = beta2 * v[pi][i] + (1.0 - beta2) * gr * gr;
                const double mh = m[pi][i] / bc1;
                const double vh = v[pi][i] / bc2;
                p.value[i] -= lr * (mh / (std::sqrt(vh) + kEps) + weight_decay * p.value[i]);
            }
        }
    }
};

Metrics metrics_from_errors(const DisparityMap& pred, const DisparityMap& gt) {
    Metrics m;
    m.total_pixels = gt.values.size();
    double sum = 0.0;
    std::size_t n = 0, g1 = 0, g2 = 0, g3 = 0;
    for (size_t i = 0; i < gt.values.size(); ++i) {
        if (!gt.valid[i]) continue;
        const double e = std::abs(pred.values[i] - gt.values[i]);
        sum += e;
        ++n;
        if (e > 1.0) ++g1;
        if (e > 2.0) ++g2;
        if (e > 3.0) ++g3;
    }
    if (n == 0) throw std::invalid_argument("compute_metrics: empty valid set");
    m.valid_pixels = n;
    m.epe = sum / static_cast<double>(n);
    m.err_gt1 = 100.0 * static_cast<double>(g1) / static_cast<double>(n);
    m.err_gt2 = 100.0 * static_cast<double>(g2) / static_cast<double>(n);
    m.err_gt3 = 100.0 * static_cast<double>(g3) / static_cast<double>(n);
    m.d1 = m.err_gt3;
    return m;
}

}  // namespace

Metrics compute_metrics(const DisparityMap& pred, const DisparityMap& gt) {
    if (pred.height != gt.height || pred.width != gt.width)
        throw std::invalid_argument("compute_metrics: size mismatch");
    return metrics_from_errors(pred, gt);
}

DisparityMap predict_disparity(RefinerModel& model, const StereoSample& sample,
                               const TrainConfig& cfg) {
    // Forward-only graph; the expectation of the emitted distribution is the
    // prediction (no windowing, no ground-truth access).
    const DisparityGrid out_grid = output_grid(cfg);
    const CostVolume vol = compute_matching_cost(sample, cfg.grid());
    ad::Tape tape;
    ad::Value x = tape.constant(
        ad::Shape{static_cast<size_t>(cfg.grid().bins()), static_cast<size_t>(vol.height),
                  static_cast<size_t>(vol.width)},
        vol.data);
    ad::Value h1 = tape.conv2d_3x3(x, tape.param(model.w1), tape.param(model.b1));
    ad::Value h2 = tape.conv2d_3x3(tape.relu(h1), tape.param(model.w2), tape.param(model.b2));
    ad::Value logits = tape.add(tape.scale_by(x, tape.param(model.tau)), h2);
    if (cfg.upsample_mode == UpsampleMode::Trilinear) logits = tape.upsample_bins(logits, 4);
    logits = tape.upsample_spatial(logits, 4);
    ad::Value pred = tape.bin_expect(tape.softmax_bins(logits), out_grid.bin_values());
    tape.forward(pred);

    DisparityMap out;
    out.height = sample.height;
    out.width = sample.width;
    out.values = tape.value_of(pred);
    out.valid.assign(out.values.size(), 1);
    return out;
}

Metrics evaluate(RefinerModel& model, const std::vector<StereoSample>& dataset,
                 const TrainConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("evaluate: empty dataset");
    double sum = 0.0;
    std::size_t n = 0, g1 = 0, g2 = 0, g3 = 0, total = 0;
    for (const StereoSample& s : dataset) {
        const DisparityMap pred = predict_disparity(model, s, cfg);
        total += s.gt.values.size();
        for (size_t i = 0; i < s.gt.values.size(); ++i) {
            if (!s.gt.valid[i]) continue;
            const double e = std::abs(pred.values[i] - s.gt.values[i]);
            sum += e;
            ++n;
            if (e > 1.0) ++g1;
            if (e > 2.0) ++g2;
            if (e > 3.0) ++g3;
        }
    }
    if (n == 0) throw std::invalid_argument("evaluate: empty valid set");
    Metrics m;
    m.total_pixels = total;
    m.valid_pixels = n;
    m.epe = sum / static_cast<double>(n);
    m.err_gt1 = 100.0 * static_cast<double>(g1) / static_cast<double>(n);
    m.err_gt2 = 100.0 * static_cast<double>(g2) / static_cast<double>(n);
    m.err_gt3 = 100.0 * static_cast<double>(g3) / static_cast<double>(n);
    m.d1 = m.err_gt3;
    return m;
}

TrainResult train(const TrainConfig& cfg, const std::vector<StereoSample>& dataset) {
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: empty dataset");

    TrainResult result;
    result.model = RefinerModel(cfg.grid().bins(), 16, cfg.seed);
    RefinerModel& model = result.model;

    std::vector<SampleGraph> graphs;
    graphs.reserve(dataset.size());
    for (const StereoSample& s : dataset) graphs.push_back(build_graph(model, s, cfg));

    const std::vector<StereoSample> eval_set = make_eval_set(cfg);

    std::vector<ad::Parameter*> params = model.parameters();
    AdamWState adam(params);
    const int batch = cfg.batch_size == 0
                          ? static_cast<int>(graphs.size())
                          : std::min<int>(cfg.batch_size, static_cast<int>(graphs.size()));

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        const double lr = (cfg.lr_decay_epoch > 0 && epoch >= cfg.lr_decay_epoch)
                              ? cfg.lr * cfg.lr_decay
                              : cfg.lr;
        double epoch_loss = 0.0;
        double epoch_tv = 0.0;
        int in_batch = 0;
        for (auto* p : params) p->zero_grad();
        for (size_t gi = 0; gi < graphs.size(); ++gi) {
            epoch_loss += graphs[gi].tape.forward_backward(graphs[gi].loss);
            epoch_tv += mean_total_variation(graphs[gi]);
            ++in_batch;
            const bool last = gi + 1 == graphs.size();
            if (in_batch == batch || last) {
                adam.update(params, lr, cfg.beta1, cfg.beta2, cfg.weight_decay,
                            1.0 / static_cast<double>(in_batch));
                for (auto* p : params) p->zero_grad();
                in_batch = 0;
            }
        }
        const double mean_loss = epoch_loss / static_cast<double>(graphs.size());
        if (!std::isfinite(mean_loss)) {
            std::ostringstream msg;
            msg << "train: loss diverged at epoch " << epoch << " (loss_mode="
                << to_string(cfg.loss_mode) << ", sigma=" << cfg.sigma
                << ", lambda=" << cfg.lambda << ", lr=" << cfg.lr << ", seed=" << cfg.seed << ")";
            throw std::runtime_error(msg.str());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = mean_loss;
        rec.mean_tv = epoch_tv / static_cast<double>(graphs.size());
        if ((epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs)
            rec.eval = evaluate(model, eval_set, cfg);
        result.history.push_back(rec);

        if (cfg.loss_threshold > 0.0 && mean_loss <= cfg.loss_threshold) break;
    }

    result.final_metrics = result.history.back().eval
                               ? *result.history.back().eval
                               : evaluate(model, eval_set, cfg);
    return result;
}

AblationAxis ablation_axis_from_string(const std::string& s) {
    if (s == "sigma") return AblationAxis::Sigma;
    if (s == "lambda") return AblationAxis::Lambda;
    if (s == "d_ext") return AblationAxis::DExt;
    if (s == "loss_mode") return AblationAxis::LossMode;
    if (s == "upsample_mode") return AblationAxis::UpsampleMode;
    throw std::invalid_argument("unknown ablation axis: " + s);
}

std::string to_string(AblationAxis a) {
    switch (a) {
        case AblationAxis::Sigma: return "sigma";
        case AblationAxis::Lambda: return "lambda";
        case AblationAxis::DExt: return "d_ext";
        case AblationAxis::LossMode: return "loss_mode";
        case AblationAxis::UpsampleMode: return "upsample_mode";
    }
    return "?";
}

TrainConfig apply_axis_value(const TrainConfig& base, AblationAxis axis,
                             const std::string& value) {
    TrainConfig cfg = base;
    switch (axis) {
        case AblationAxis::Sigma: cfg.sigma = std::stod(value); break;
        case AblationAxis::Lambda: cfg.lambda = std::stod(value); break;
        case AblationAxis::DExt: cfg.d_ext = std::stoi(value); break;
        case AblationAxis::LossMode: cfg.loss_mode = loss_mode_from_string(value); break;
        case AblationAxis::UpsampleMode:
            cfg.upsample_mode = upsample_mode_from_string(value);
            break;
    }
    return cfg;
}

AblationResult run_ablation(AblationAxis axis, const std::vector<std::string>& values,
                            const TrainConfig& base, int seeds_per_value, int jobs) {
    if (values.size() < 2) throw std::invalid_argument("run_ablation: needs >= 2 values");
    if (seeds_per_value < 1) throw std::invalid_argument("run_ablation: needs >= 1 seed");

    AblationResult out;
    out.axis = axis;
    out.cells.resize(values.size() * static_cast<size_t>(seeds_per_value));

    struct Job {
        size_t cell;
        TrainConfig cfg;
        std::string value;
    };
    std::vector<Job> todo;
    for (size_t vi = 0; vi < values.size(); ++vi)
        for (int si = 0; si < seeds_per_value; ++si) {
            TrainConfig cfg = apply_axis_value(base, axis, values[vi]);
            cfg.seed = base.seed + static_cast<std::uint64_t>(si);
            todo.push_back({vi * static_cast<size_t>(seeds_per_value) +
                                static_cast<size_t>(si),
                            cfg, values[vi]});
        }

    const auto run_one = [&](const Job& job) {
        const std::vector<StereoSample> ds = make_training_set(job.cfg);
        TrainResult r = train(job.cfg, ds);
        AblationCell cell;
        cell.value = job.value;
        cell.seed = job.cfg.seed;
        cell.metrics = r.final_metrics;
        cell.final_train_loss = r.history.back().train_loss;
        out.cells[job.cell] = cell;
    };

    if (jobs <= 1) {
        for (const Job& job : todo) run_one(job);
    } else {
        std::vector<std::thread> pool;
        std::atomic<size_t> next{0};
        const int nthreads = std::min<int>(jobs, static_cast<int>(todo.size()));
        for (int t = 0; t < nthreads; ++t)
            pool.emplace_back([&]() {
                for (;;) {
                    const size_t i = next.fetch_add(1);
                    if (i >= todo.size()) return;
                    run_one(todo[i]);
                }
            });
        for (auto& th : pool) th.join();
    }

    for (size_t vi = 0; vi < values.size(); ++vi) {
        Metrics mean;
        for (int si = 0; si < seeds_per_value; ++si) {
            const Metrics& m =
                out.cells[vi * static_cast<size_t>(seeds_per_value) + static_cast<size_t>(si)]
                    .metrics;
            mean.epe += m.epe;
            mean.d1 += m.d1;
            mean.err_gt1 += m.err_gt1;
            mean.err_gt2 += m.err_gt2;
            mean.err_gt3 += m.err_gt3;
            mean.valid_pixels += m.valid_pixels;
            mean.total_pixels += m.total_pixels;
        }
        const double k = static_cast<double>(seeds_per_value);
        mean.epe /= k;
        mean.d1 /= k;
        mean.err_gt1 /= k;
        mean.err_gt2 /= k;
        mean.err_gt3 /= k;
        out.means.emplace_back(values[vi], mean);
    }
    return out;
}

}  // namespace sgstereo
