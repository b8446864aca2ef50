#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "reassemble/geometry.hpp"
#include "reassemble/nn.hpp"

namespace reassemble::diffusion {

using geometry::Vec2;
using nn::Mat;
using nn::Var;

class BadT : public Error {
public:
    using Error::Error;
};
class BadTimestep : public Error {
public:
    using Error::Error;
};
class ShapeMismatch : public Error {
public:
    using Error::Error;
};
class EmptyPiece : public Error {
public:
    using Error::Error;
};
class UntrainedModel : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Noise schedule
// ---------------------------------------------------------------------------

/// beta_t, alpha_t = 1 - beta_t and alpha_bar_t = prod alpha over T steps.
/// Arrays are 0-indexed: index i holds diffusion step i+1, so alpha_bar[0] ==
/// alpha[0] and the last reverse step returns x0 exactly.
struct NoiseSchedule {
    int T = 0;
    Eigen::VectorXd beta;
    Eigen::VectorXd alpha;
    Eigen::VectorXd alpha_bar;
};

inline NoiseSchedule cosine_schedule(int T, double s = 0.008) {
    if (T < 2) throw BadT("schedule needs T >= 2");
    auto f = [&](double t) {
        double v = std::cos(((t / T + s) / (1.0 + s)) * kPi / 2.0);
        return v * v;
    };
    const double f0 = f(0.0);

    NoiseSchedule sched;
    sched.T = T;
    sched.beta.resize(T);
    sched.alpha.resize(T);
    sched.alpha_bar.resize(T);
    double prev_bar = 1.0;
    double running = 1.0;
    for (int i = 0; i < T; ++i) {
        double bar = f(double(i + 1)) / f0;
        double beta = 1.0 - bar / prev_bar;
        beta = std::clamp(beta, 1e-8, 0.999);
        prev_bar = bar;
        sched.beta[i] = beta;
        sched.alpha[i] = 1.0 - beta;
        running *= sched.alpha[i];
        sched.alpha_bar[i] = running;  // cumprod keeps identities exact after clipping
    }
    return sched;
}

// ---------------------------------------------------------------------------
// Forward / reverse steps
// ---------------------------------------------------------------------------

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps, per keypoint row.
inline Mat forward_noise(const Mat& x0, int t, const NoiseSchedule& sched, const Mat& eps) {
    if (t < 0 || t >= sched.T) throw BadTimestep("t outside [0, T)");
    if (eps.rows() != x0.rows() || eps.cols() != x0.cols())
        throw ShapeMismatch("noise shape must match x0");
    double ab = sched.alpha_bar[t];
    return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

/// One deterministic reverse step (sigma = 0): converts the predicted x0 into
/// predicted noise by the schedule identity, then removes one step of noise.
/// With t == 0 this returns x0_hat exactly.
inline Mat denoise_step(const Mat& x_t, const Mat& x0_hat, int t, const NoiseSchedule& sched) {
    if (t < 0 || t >= sched.T) throw BadTimestep("t outside [0, T)");
    if (x0_hat.rows() != x_t.rows() || x0_hat.cols() != x_t.cols())
        throw ShapeMismatch("x0_hat shape must match x_t");
    double ab = sched.alpha_bar[t];
    double a = sched.alpha[t];
    double one_minus = 1.0 - ab;
    Mat eps_hat;
    if (one_minus < 1e-12)
        eps_hat = Mat::Zero(x_t.rows(), x_t.cols());
    else
        eps_hat = (x_t - std::sqrt(ab) * x0_hat) / std::sqrt(one_minus);
    Mat out = x_t;
    if (one_minus >= 1e-12) out -= ((1.0 - a) / std::sqrt(one_minus)) * eps_hat;
    return out / std::sqrt(a);
}

/// Deterministic DDIM jump from noise level t_from to t_to (t_to == -1 means
/// clean). Used for strided sampling subsequences.
inline Mat ddim_step(const Mat& x_t, const Mat& x0_hat, int t_from, int t_to,
                     const NoiseSchedule& sched) {
    if (t_from < 0 || t_from >= sched.T) throw BadTimestep("t_from outside [0, T)");
    if (t_to < -1 || t_to >= t_from) throw BadTimestep("t_to must be in [-1, t_from)");
    double ab_from = sched.alpha_bar[t_from];
    double one_minus = 1.0 - ab_from;
    Mat eps_hat;
    if (one_minus < 1e-12)
        eps_hat = Mat::Zero(x_t.rows(), x_t.cols());
    else
        eps_hat = (x_t - std::sqrt(ab_from) * x0_hat) / std::sqrt(one_minus);
    double ab_to = t_to < 0 ? 1.0 : sched.alpha_bar[t_to];
    return std::sqrt(ab_to) * x0_hat + std::sqrt(1.0 - ab_to) * eps_hat;
}

// ---------------------------------------------------------------------------
// Denoiser
// ---------------------------------------------------------------------------

struct DenoiserConfig {
    int layers = 6;  // alternating intra / inter blocks, must be even
    int heads = 4;
    int width = 128;
    int t_embed_width = 64;
    bool inter_attention = true;  // disabled only by isolation tests

    void validate() const {
        if (layers < 2 || layers % 2 != 0) throw Error("denoiser layers must be even and >= 2");
        if (width < 8 || t_embed_width < 8) throw Error("denoiser widths must be >= 8");
        if (width % heads != 0) throw Error("width must be divisible by heads");
        if (t_embed_width % 2 != 0) throw Error("t_embed_width must be even");
    }

    bool operator==(const DenoiserConfig&) const = default;
};

struct TrainLossReport {
    double loss_translation = 0.0;
    double loss_rotation = 0.0;
    double total = 0.0;
};

struct AggregatedPose {
    Vec2 translation{0, 0};
    Vec2 rotation{1, 0};
    bool degenerate = false;
};

/// Block-diagonal mask: token i attends to token j iff same piece.
inline Mat intra_piece_mask(const std::vector<int>& piece_index) {
    const int n = int(piece_index.size());
    Mat m = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            if (piece_index[size_t(i)] == piece_index[size_t(j)]) m(i, j) = 1.0;
    return m;
}

/// Per-keypoint x0 predictor. Token = affine projection of
/// [x_t row | canonical coords | features | timestep embedding]; blocks
/// alternate intra-piece (block-diagonal mask) and inter-piece (full)
/// attention; an affine head emits 4 channels per token.
class DenoiserModel {
public:
    DenoiserModel() = default;

    DenoiserModel(const DenoiserConfig& config, int feature_width, uint64_t seed = 23)
        : config_(config), feature_width_(feature_width) {
        config_.validate();
        Rng rng(seed);
        const int in_width = 4 + 2 + feature_width + config_.t_embed_width;
        input_proj_ = nn::LinearWeights::create(params_, "denoiser.input", in_width,
                                                config_.width, rng);
        for (int l = 0; l < config_.layers; ++l)
            blocks_.push_back(nn::EncoderBlockWeights::create(
                params_, "denoiser.block" + std::to_string(l), config_.width, 2 * config_.width,
                rng));
        final_ln_ = nn::LayerNormWeights::create(params_, "denoiser.final_ln", config_.width);
        head_ = nn::LinearWeights::create(params_, "denoiser.head", config_.width, 4, rng);
    }

    const DenoiserConfig& config() const { return config_; }
    int feature_width() const { return feature_width_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }
    bool trained() const { return trained_; }
    void mark_trained() { trained_ = true; }

    /// Tape forward. `features` may carry gradients (joint texture/selector
    /// training); x_t, coords and the timestep embedding are constants.
    Var forward(nn::Tape& t, nn::ParamBinding& bind, const Mat& x_t, const Mat& coords,
                Var features, int timestep, const std::vector<int>& piece_index,
                std::vector<Mat>* capture_attention = nullptr) const {
        const int n = int(x_t.rows());
        if (x_t.cols() != 4) throw ShapeMismatch("pose state must have 4 channels");
        if (int(coords.rows()) != n || int(t.val(features).rows()) != n ||
            int(piece_index.size()) != n)
            throw ShapeMismatch("token inputs disagree on row count");
        if (int(t.val(features).cols()) != feature_width_)
            throw ShapeMismatch("feature width does not match the model");

        Mat temb = nn::sinusoidal_embedding(timestep, config_.t_embed_width);
        Var tokens = nn::concat_cols(
            t, {t.constant(x_t), t.constant(coords), features,
                t.constant(temb.replicate(n, 1))});
        Var h = nn::linear(t, bind, tokens, input_proj_);

        Mat intra = intra_piece_mask(piece_index);
        Mat inter = Mat::Ones(n, n);
        for (int l = 0; l < config_.layers; ++l) {
            bool is_inter = l % 2 == 1;
            if (is_inter && !config_.inter_attention) continue;
            h = nn::encoder_block(t, bind, h, is_inter ? inter : intra, blocks_[size_t(l)],
                                  config_.heads, capture_attention);
        }
        h = nn::layernorm(t, bind, h, final_ln_);
        return nn::linear(t, bind, h, head_);
    }

    /// Convenience forward for frozen features.
    Mat predict(const Mat& x_t, const Mat& coords, const Mat& features, int timestep,
                const std::vector<int>& piece_index) const {
        nn::Tape t(false);
        nn::ParamBinding bind;
        Var out = forward(t, bind, x_t, coords, t.constant(features), timestep, piece_index);
        return t.val(out);
    }

private:
    DenoiserConfig config_;
    int feature_width_ = 0;
    nn::ParamSet params_;
    nn::LinearWeights input_proj_;
    std::vector<nn::EncoderBlockWeights> blocks_;
    nn::LayerNormWeights final_ln_;
    nn::LinearWeights head_;
    bool trained_ = false;
};

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Ground-truth pose rows [s_x, s_y, cos, sin] broadcast to each keypoint of
/// its piece.
inline Mat broadcast_pose_rows(const std::vector<geometry::RigidTransform2D>& poses,
                               const std::vector<int>& piece_index) {
    Mat rows(piece_index.size(), 4);
    for (size_t i = 0; i < piece_index.size(); ++i) {
        const auto& p = poses.at(size_t(piece_index[i]));
        rows(Eigen::Index(i), 0) = p.translation.x;
        rows(Eigen::Index(i), 1) = p.translation.y;
        rows(Eigen::Index(i), 2) = p.rotation.x;
        rows(Eigen::Index(i), 3) = p.rotation.y;
    }
    return rows;
}

inline TrainLossReport training_losses(const Mat& x0_hat, const Mat& gt_rows) {
    if (x0_hat.rows() != gt_rows.rows() || x0_hat.cols() != 4 || gt_rows.cols() != 4)
        throw ShapeMismatch("loss inputs must be [N x 4] with matching rows");
    const double n = double(x0_hat.rows());
    TrainLossReport r;
    r.loss_translation = (x0_hat.leftCols(2) - gt_rows.leftCols(2)).squaredNorm() / n;
    r.loss_rotation = (x0_hat.rightCols(2) - gt_rows.rightCols(2)).squaredNorm() / n;
    r.total = r.loss_translation + r.loss_rotation;
    return r;
}

/// Tape version: total = L_tr + L_rt, both mean squared L2 over keypoints.
inline Var training_losses_tape(nn::Tape& t, Var x0_hat, const Mat& gt_rows,
                                TrainLossReport* report = nullptr) {
    const Mat& pred = t.val(x0_hat);
    if (pred.rows() != gt_rows.rows() || pred.cols() != 4)
        throw ShapeMismatch("loss inputs must be [N x 4] with matching rows");
    const double n = double(pred.rows());
    Var diff_tr = nn::sub(t, nn::slice_cols(t, x0_hat, 0, 2),
                          t.constant(Mat(gt_rows.leftCols(2))));
    Var diff_rt = nn::sub(t, nn::slice_cols(t, x0_hat, 2, 2),
                          t.constant(Mat(gt_rows.rightCols(2))));
    Var l_tr = nn::scale(t, nn::sum_squares(t, diff_tr), 1.0 / n);
    Var l_rt = nn::scale(t, nn::sum_squares(t, diff_rt), 1.0 / n);
    if (report) {
        report->loss_translation = t.val(l_tr)(0, 0);
        report->loss_rotation = t.val(l_rt)(0, 0);
        report->total = report->loss_translation + report->loss_rotation;
    }
    return nn::add(t, l_tr, l_rt);
}

// ---------------------------------------------------------------------------
// Aggregation
// ---------------------------------------------------------------------------

/// Mean translation and renormalized mean rotation over one piece's rows.
inline AggregatedPose aggregate_pose(const Mat& rows) {
    if (rows.rows() < 1 || rows.cols() != 4) throw EmptyPiece("aggregate needs [K x 4], K >= 1");
    AggregatedPose out;
    Eigen::RowVector4d mean = rows.colwise().mean();
    out.translation = {mean[0], mean[1]};
    double norm = std::hypot(mean[2], mean[3]);
    if (norm < 1e-9) {
        out.rotation = {1.0, 0.0};
        out.degenerate = true;
    } else {
        out.rotation = {mean[2] / norm, mean[3] / norm};
    }
    return out;
}

inline std::vector<AggregatedPose> aggregate_by_piece(const Mat& rows,
                                                      const std::vector<int>& piece_index,
                                                      int piece_count) {
    std::vector<AggregatedPose> out;
    for (int m = 0; m < piece_count; ++m) {
        std::vector<int> sel;
        for (size_t i = 0; i < piece_index.size(); ++i)
            if (piece_index[i] == m) sel.push_back(int(i));
        if (sel.empty()) throw EmptyPiece("piece has no keypoint rows");
        Mat rows_m(sel.size(), 4);
        for (size_t i = 0; i < sel.size(); ++i) rows_m.row(Eigen::Index(i)) = rows.row(sel[i]);
        out.push_back(aggregate_pose(rows_m));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Sampling
// ---------------------------------------------------------------------------

struct SampleTraceEntry {
    int timestep = 0;
    std::vector<AggregatedPose> poses;
};

struct SampleOptions {
    int steps = 50;
    uint64_t seed = 0;
    std::vector<SampleTraceEntry>* trace = nullptr;
    /// Test hook: when set, replaces the model prediction (e.g. a ground-truth
    /// oracle); the model may then be untrained.
    std::function<Mat(const Mat& x_t, int t)> predictor_override;
};

/// Descending strided subsequence of [0, T-1] with `steps` entries, always
/// containing T-1 and 0.
inline std::vector<int> sampling_timesteps(int T, int steps) {
    steps = std::clamp(steps, 1, T);
    std::vector<int> ts;
    if (steps == 1) return {T - 1};
    for (int i = 0; i < steps; ++i) {
        int t = int(std::lround(double(T - 1) * (steps - 1 - i) / double(steps - 1)));
        if (ts.empty() || ts.back() != t) ts.push_back(t);
    }
    return ts;
}

/// Deterministic reverse chain from x_T ~ N(0, I). Full-length chains use the
/// per-step Eq.-(5) update; strided chains take DDIM jumps between the chosen
/// noise levels (sigma = 0 in both cases).
inline Mat sample_chain(const DenoiserModel& model, const NoiseSchedule& sched,
                        const Mat& coords, const Mat& features,
                        const std::vector<int>& piece_index, int piece_count,
                        const SampleOptions& opts) {
    if (!opts.predictor_override && !model.trained())
        throw UntrainedModel("sampling requires trained weights (or an override)");

    const int n = int(coords.rows());
    Rng rng(opts.seed);
    Mat x(n, 4);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < 4; ++c) x(r, c) = rng.normal();

    auto predict = [&](const Mat& x_t, int t) {
        if (opts.predictor_override) return opts.predictor_override(x_t, t);
        return model.predict(x_t, coords, features, t, piece_index);
    };

    std::vector<int> ts = sampling_timesteps(sched.T, opts.steps);
    const bool full_chain = int(ts.size()) == sched.T;
    for (size_t i = 0; i < ts.size(); ++i) {
        int t = ts[i];
        Mat x0_hat = predict(x, t);
        int t_next = i + 1 < ts.size() ? ts[i + 1] : -1;
        if (full_chain)
            x = denoise_step(x, x0_hat, t, sched);
        else
            x = ddim_step(x, x0_hat, t, t_next, sched);
        if (opts.trace)
            opts.trace->push_back({t, aggregate_by_piece(x, piece_index, piece_count)});
    }
    return x;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

inline nn::json denoiser_config_json(const DenoiserConfig& c) {
    return {{"layers", c.layers},
            {"heads", c.heads},
            {"width", c.width},
            {"t_embed_width", c.t_embed_width},
            {"inter_attention", c.inter_attention}};
}

inline DenoiserConfig denoiser_config_from_json(const nn::json& j) {
    DenoiserConfig c;
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.width = j.at("width");
    c.t_embed_width = j.at("t_embed_width");
    c.inter_attention = j.value("inter_attention", true);
    return c;
}

inline void save_denoiser(const std::string& path, const DenoiserModel& model,
                          nn::json extra_header) {
    extra_header["kind"] = "denoiser";
    extra_header["config"] = denoiser_config_json(model.config());
    extra_header["feature_width"] = model.feature_width();
    nn::save_checkpoint(path, extra_header, model.params().all());
}

inline DenoiserModel load_denoiser(const std::string& path, nn::json* header_out = nullptr) {
    nn::Checkpoint ck = nn::load_checkpoint(path);
    if (ck.header.value("kind", "") != "denoiser")
        throw nn::IncompatibleCheckpoint("not a denoiser checkpoint: " + path);
    DenoiserConfig config = denoiser_config_from_json(ck.header.at("config"));
    DenoiserModel model(config, ck.header.at("feature_width"));
    nn::restore_params(model.params(), ck);
    model.mark_trained();
    if (header_out) *header_out = ck.header;
    return model;
}

}  // namespace reassemble::diffusion
