#pragma once

#include <string>
#include <vector>

#include "reassemble/geometry.hpp"
#include "reassemble/nn.hpp"

namespace reassemble::selector {

using geometry::Keypoint;
using geometry::KTooLarge;
using geometry::Vec2;
using nn::Mat;
using nn::Var;

class TooFewKeypoints : public Error {
public:
    using Error::Error;
};
class ZeroProjectionVector : public Error {
public:
    using Error::Error;
};
class DegenerateSelection : public Error {
public:
    using Error::Error;
};
class DatasetEmpty : public Error {
public:
    using Error::Error;
};

struct SelectorConfig {
    int hidden_width = 64;  // projected feature width F
    int layers = 3;
    int heads = 4;
    int k = 20;
    double lambda_area = 1.0;
    double lambda_perimeter = 1.0;
    int max_candidates = 512;  // larger graphs are FPS-subsampled first

    bool operator==(const SelectorConfig&) const = default;
};

struct SelectorGraph {
    Mat node_features;                // [n x F]
    Mat adjacency;                    // [n x n] complete, zero diagonal
    std::vector<Vec2> node_positions; // original keypoint coordinates
};

struct PoolingParams {
    Eigen::VectorXd p;
    int k = 1;
};

struct PoolResult {
    std::vector<int> indices;  // ascending, preserving contour order
    Mat gated_features;        // [k x F]
    Mat sub_adjacency;         // [k x k]
    Eigen::VectorXd scores;    // y over all input nodes
};

struct SelectorLossReport {
    double loss_area = 0.0;
    double loss_perimeter = 0.0;
    double total = 0.0;
    double lambda_area = 1.0;
    double lambda_perimeter = 1.0;
};

enum class SelectionMode { Fps, LearnableFrozen, LearnableTrainable };

inline SelectionMode selection_mode_from_string(const std::string& s) {
    if (s == "fps") return SelectionMode::Fps;
    if (s == "learnable-frozen") return SelectionMode::LearnableFrozen;
    if (s == "learnable-trainable") return SelectionMode::LearnableTrainable;
    throw Error("unknown selection mode: " + s);
}

struct Selection {
    std::vector<int> indices;
    std::vector<Keypoint> keypoints;
    Eigen::VectorXd gates;  // tanh(score) for learnable modes, ones for FPS
};

// ---------------------------------------------------------------------------
// Pure pooling (Eq.-style worked examples run on raw matrices)
// ---------------------------------------------------------------------------

/// Hard top-k over scores: largest first, ties to the lower index; returned
/// ascending so downstream polygon math keeps contour order.
inline std::vector<int> topk_indices(const Eigen::VectorXd& y, int k) {
    std::vector<int> order(size_t(y.size()));
    for (int i = 0; i < y.size(); ++i) order[size_t(i)] = i;
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return y[a] > y[b]; });
    order.resize(size_t(k));
    std::sort(order.begin(), order.end());
    return order;
}

inline PoolResult topk_pool(const Mat& D, const Mat& A, const PoolingParams& params) {
    if (params.p.size() != D.cols()) throw Error("projection vector width mismatch");
    double pnorm = params.p.norm();
    if (pnorm < 1e-12) throw ZeroProjectionVector("projection vector has zero norm");
    if (params.k < 1 || params.k > D.rows()) throw KTooLarge("k must satisfy 1 <= k <= rows(D)");

    PoolResult out;
    out.scores = D * params.p / pnorm;
    out.indices = topk_indices(out.scores, params.k);

    out.gated_features.resize(params.k, D.cols());
    for (int i = 0; i < params.k; ++i) {
        int j = out.indices[size_t(i)];
        out.gated_features.row(i) = D.row(j) * std::tanh(out.scores[j]);
    }
    out.sub_adjacency.resize(params.k, params.k);
    for (int r = 0; r < params.k; ++r)
        for (int c = 0; c < params.k; ++c)
            out.sub_adjacency(r, c) = A(out.indices[size_t(r)], out.indices[size_t(c)]);
    return out;
}

// ---------------------------------------------------------------------------
// Shape-preservation loss (exact, on the selected polygon)
// ---------------------------------------------------------------------------

inline SelectorLossReport selector_pretrain_loss(const std::vector<Vec2>& all_points,
                                                 std::vector<int> selected_indices,
                                                 double lambda_area = 1.0,
                                                 double lambda_perimeter = 1.0) {
    if (selected_indices.size() < 3)
        throw DegenerateSelection("need at least 3 selected keypoints");
    std::sort(selected_indices.begin(), selected_indices.end());
    std::vector<Vec2> sel;
    sel.reserve(selected_indices.size());
    for (int i : selected_indices) {
        if (i < 0 || size_t(i) >= all_points.size())
            throw Error("selected index out of range");
        sel.push_back(all_points[size_t(i)]);
    }

    double a_total = geometry::polygon_area(all_points);
    double p_total = geometry::polygon_perimeter(all_points);
    double a_sel = geometry::polygon_area(sel);
    double p_sel = geometry::polygon_perimeter(sel);

    SelectorLossReport r;
    r.lambda_area = lambda_area;
    r.lambda_perimeter = lambda_perimeter;
    double ra = a_total != 0 ? (a_total - a_sel) / a_total : 0.0;
    double rp = p_total != 0 ? (p_total - p_sel) / p_total : 0.0;
    r.loss_area = ra * ra;
    r.loss_perimeter = rp * rp;
    r.total = lambda_area * r.loss_area + lambda_perimeter * r.loss_perimeter;
    return r;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

/// Raw node features [x, y, curvature, edge angle], normalized per piece so
/// training is scale-free: positions centered and divided by the mean radius,
/// curvature multiplied by it, angle mapped to [-1, 1).
inline Mat raw_node_features(const std::vector<Keypoint>& kps) {
    const int n = int(kps.size());
    Vec2 c{0, 0};
    for (const Keypoint& kp : kps) c += kp.position;
    c = c / double(n);
    double scale = 0.0;
    for (const Keypoint& kp : kps) scale += (kp.position - c).norm();
    scale = n > 0 ? scale / n : 1.0;
    if (scale < 1e-9) scale = 1.0;

    Mat raw(n, 4);
    for (int i = 0; i < n; ++i) {
        raw(i, 0) = (kps[size_t(i)].position.x - c.x) / scale;
        raw(i, 1) = (kps[size_t(i)].position.y - c.y) / scale;
        raw(i, 2) = kps[size_t(i)].curvature * scale;
        raw(i, 3) = kps[size_t(i)].edge_angle / 180.0 - 1.0;
    }
    return raw;
}

/// Complete-graph attention mask without self-loops.
inline Mat complete_adjacency(int n) {
    Mat a = Mat::Ones(n, n);
    a.diagonal().setZero();
    return a;
}

class SelectorModel {
public:
    SelectorModel() = default;
    explicit SelectorModel(const SelectorConfig& config, uint64_t seed = 17) : config_(config) {
        Rng rng(seed);
        proj_ = nn::LinearWeights::create(params_, "selector.proj", 4, config.hidden_width, rng);
        for (int l = 0; l < config.layers; ++l)
            blocks_.push_back(nn::EncoderBlockWeights::create(
                params_, "selector.block" + std::to_string(l), config.hidden_width,
                2 * config.hidden_width, rng));
        pool_p_ = &params_.add("selector.pool.p",
                               nn::init_uniform(rng, config.hidden_width, 1, 0.5));
    }

    const SelectorConfig& config() const { return config_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    /// Projected node features plus complete adjacency.
    SelectorGraph build_graph(const std::vector<Keypoint>& kps, int k) const {
        if (int(kps.size()) < k)
            throw TooFewKeypoints("piece yields fewer keypoints than k");
        nn::Tape t(false);
        nn::ParamBinding bind;
        Var d = forward_projection(t, bind, raw_node_features(kps));
        SelectorGraph g;
        g.node_features = t.val(d);
        g.adjacency = complete_adjacency(int(kps.size()));
        for (const Keypoint& kp : kps) g.node_positions.push_back(kp.position);
        return g;
    }

    /// Graph-transformer refinement of the node features (message passing
    /// masked by the adjacency).
    SelectorGraph encode(const SelectorGraph& g, int layers = -1) const {
        nn::Tape t(false);
        nn::ParamBinding bind;
        Var d = t.push(g.node_features);
        d = forward_blocks(t, bind, d, g.adjacency, layers);
        SelectorGraph out = g;
        out.node_features = t.val(d);
        return out;
    }

    /// Scores for every node under the current weights.
    Eigen::VectorXd scores(const std::vector<Keypoint>& kps) const {
        nn::Tape t(false);
        nn::ParamBinding bind;
        Var d = forward_projection(t, bind, raw_node_features(kps));
        d = forward_blocks(t, bind, d, complete_adjacency(int(kps.size())), -1);
        Mat y = t.val(d) * pool_p_->value / std::max(pool_p_->value.norm(), 1e-12);
        return y.col(0);
    }

    PoolingParams pooling_params(int k) const { return {pool_p_->value.col(0), k}; }

    // -- tape paths (training) ------------------------------------------------

    Var forward_projection(nn::Tape& t, nn::ParamBinding& bind, const Mat& raw) const {
        return nn::linear(t, bind, t.constant(raw), proj_);
    }

    Var forward_blocks(nn::Tape& t, nn::ParamBinding& bind, Var d, const Mat& adjacency,
                       int layers = -1) const {
        int use_layers = layers < 0 ? int(blocks_.size()) : layers;
        use_layers = std::min<int>(use_layers, int(blocks_.size()));
        for (int l = 0; l < use_layers; ++l)
            d = nn::encoder_block(t, bind, d, adjacency, blocks_[size_t(l)], config_.heads);
        return d;
    }

    Var forward_scores(nn::Tape& t, nn::ParamBinding& bind, const Mat& raw,
                       const Mat& adjacency) const {
        Var d = forward_projection(t, bind, raw);
        d = forward_blocks(t, bind, d, adjacency, -1);
        Var p = bind.bind(t, *pool_p_);
        Var pnorm = nn::sqrt_scalar(t, nn::sum_squares(t, p));
        return nn::div_scalar_var(t, nn::matmul(t, d, p), pnorm);
    }

    /// Differentiable pretraining objective: the scores are regressed onto a
    /// greedy shape-preservation oracle. The oracle repeatedly deletes the
    /// vertex whose removal costs the least area and perimeter (the same
    /// quantities the preservation loss measures) until k survive; scores are
    /// trained to separate survivors from casualties. The exact top-k
    /// preservation loss is reported alongside.
    Var pretrain_loss(nn::Tape& t, nn::ParamBinding& bind, const std::vector<Keypoint>& kps,
                      int k, SelectorLossReport* hard_report = nullptr,
                      const std::vector<int>* fixed_indices = nullptr) const {
        const int n = int(kps.size());
        if (n < k) throw TooFewKeypoints("piece yields fewer keypoints than k");
        Var y = forward_scores(t, bind, raw_node_features(kps), complete_adjacency(n));

        std::vector<Vec2> positions;
        positions.reserve(kps.size());
        for (const Keypoint& kp : kps) positions.push_back(kp.position);

        std::vector<int> oracle = oracle_keep_set(positions, k, config_.lambda_area,
                                                  config_.lambda_perimeter);
        Mat targets = Mat::Zero(n, 1);
        for (int i : oracle) targets(i, 0) = 1.0;

        Var gates = nn::sigmoid_op(t, y);
        Var loss = nn::mean_all(
            t, nn::mul(t, nn::sub(t, gates, t.constant(targets)),
                       nn::sub(t, gates, t.constant(targets))));

        if (hard_report) {
            std::vector<int> indices =
                fixed_indices ? *fixed_indices : topk_indices(t.val(y).col(0), k);
            *hard_report = selector_pretrain_loss(positions, indices, config_.lambda_area,
                                                  config_.lambda_perimeter);
        }
        return loss;
    }

    /// Greedy simplification: remove the vertex whose deletion changes the
    /// relative area and perimeter least, until k remain.
    static std::vector<int> oracle_keep_set(const std::vector<Vec2>& pts, int k,
                                            double lambda_area, double lambda_perimeter) {
        const int n = int(pts.size());
        double a_total = std::max(geometry::polygon_area(pts), 1e-12);
        double p_total = std::max(geometry::polygon_perimeter(pts), 1e-12);
        std::vector<int> prev(size_t(n), 0), next(size_t(n), 0);
        std::vector<bool> alive(size_t(n), true);
        for (int i = 0; i < n; ++i) {
            prev[size_t(i)] = (i + n - 1) % n;
            next[size_t(i)] = (i + 1) % n;
        }
        auto removal_cost = [&](int i) {
            const Vec2& a = pts[size_t(prev[size_t(i)])];
            const Vec2& b = pts[size_t(i)];
            const Vec2& c = pts[size_t(next[size_t(i)])];
            double darea = 0.5 * std::abs((b - a).cross(c - a));
            double dper = (b - a).norm() + (c - b).norm() - (c - a).norm();
            return lambda_area * darea / a_total + lambda_perimeter * dper / p_total;
        };
        int remaining = n;
        while (remaining > k) {
            int best = -1;
            double best_cost = std::numeric_limits<double>::max();
            for (int i = 0; i < n; ++i) {
                if (!alive[size_t(i)]) continue;
                double c = removal_cost(i);
                if (c < best_cost) {
                    best_cost = c;
                    best = i;
                }
            }
            alive[size_t(best)] = false;
            next[size_t(prev[size_t(best)])] = next[size_t(best)];
            prev[size_t(next[size_t(best)])] = prev[size_t(best)];
            --remaining;
        }
        std::vector<int> keep;
        for (int i = 0; i < n; ++i)
            if (alive[size_t(i)]) keep.push_back(i);
        return keep;
    }

private:
    SelectorConfig config_;
    nn::ParamSet params_;
    nn::LinearWeights proj_;
    std::vector<nn::EncoderBlockWeights> blocks_;
    nn::Parameter* pool_p_ = nullptr;
};

// ---------------------------------------------------------------------------
// Spec-level operations
// ---------------------------------------------------------------------------

inline SelectorGraph build_selector_graph(const SelectorModel& model,
                                          const std::vector<Keypoint>& kps, int k) {
    return model.build_graph(kps, k);
}

inline SelectorGraph graph_transformer_encode(const SelectorModel& model, const SelectorGraph& g,
                                              int layers) {
    return model.encode(g, layers);
}

/// Unsupervised pretraining: minimizes the gated preservation objective,
/// reports the exact loss curve (mean per epoch).
inline std::vector<double> pretrain_selector(SelectorModel& model,
                                             const std::vector<std::vector<Keypoint>>& pieces,
                                             int epochs, int k, double lr = 1e-3) {
    if (pieces.empty()) throw DatasetEmpty("selector pretraining needs at least one piece");
    for (const auto& piece : pieces)
        if (int(piece.size()) < k) throw TooFewKeypoints("piece yields fewer keypoints than k");

    nn::Adam opt(lr);
    std::vector<double> curve;
    curve.reserve(size_t(epochs));
    for (int epoch = 0; epoch < epochs; ++epoch) {
        double hard_sum = 0.0;
        for (const auto& piece : pieces) {
            nn::Tape t;
            nn::ParamBinding bind;
            SelectorLossReport hard;
            Var loss = model.pretrain_loss(t, bind, piece, k, &hard);
            t.backward(loss);
            opt.step(t, bind);
            hard_sum += hard.total;
        }
        curve.push_back(hard_sum / double(pieces.size()));
    }
    return curve;
}

/// Selects exactly k keypoints in contour order.
inline Selection select_keypoints(const std::vector<Keypoint>& kps, SelectionMode mode, int k,
                                  const SelectorModel* model = nullptr) {
    if (int(kps.size()) < k) throw TooFewKeypoints("piece yields fewer keypoints than k");

    Selection sel;
    if (mode == SelectionMode::Fps) {
        std::vector<Vec2> positions;
        positions.reserve(kps.size());
        for (const Keypoint& kp : kps) positions.push_back(kp.position);
        sel.indices = geometry::farthest_point_sampling(positions, k, 0);
        sel.gates = Eigen::VectorXd::Ones(k);
    } else {
        if (!model) throw Error("learnable selection requires a selector model");
        std::vector<Keypoint> pool = kps;
        std::vector<int> remap(kps.size());
        for (size_t i = 0; i < kps.size(); ++i) remap[i] = int(i);
        if (int(pool.size()) > model->config().max_candidates) {
            std::vector<Vec2> positions;
            for (const Keypoint& kp : pool) positions.push_back(kp.position);
            remap = geometry::farthest_point_sampling(positions, model->config().max_candidates, 0);
            std::vector<Keypoint> sub;
            for (int i : remap) sub.push_back(pool[size_t(i)]);
            pool = std::move(sub);
        }
        Eigen::VectorXd y = model->scores(pool);
        std::vector<int> local = topk_indices(y, k);
        sel.gates = Eigen::VectorXd(k);
        for (int i = 0; i < k; ++i) {
            sel.indices.push_back(remap[size_t(local[size_t(i)])]);
            sel.gates[i] = std::tanh(y[local[size_t(i)]]);
        }
    }
    for (int i : sel.indices) sel.keypoints.push_back(kps[size_t(i)]);
    return sel;
}

// ---------------------------------------------------------------------------
// Checkpointing
// ---------------------------------------------------------------------------

inline void save_selector(const std::string& path, const SelectorModel& model) {
    nn::json header{{"kind", "selector"},
                    {"config",
                     {{"hidden_width", model.config().hidden_width},
                      {"layers", model.config().layers},
                      {"heads", model.config().heads},
                      {"k", model.config().k},
                      {"lambda_area", model.config().lambda_area},
                      {"lambda_perimeter", model.config().lambda_perimeter},
                      {"max_candidates", model.config().max_candidates}}}};
    nn::save_checkpoint(path, header, model.params().all());
}

inline SelectorModel load_selector(const std::string& path) {
    nn::Checkpoint ck = nn::load_checkpoint(path);
    if (ck.header.value("kind", "") != "selector")
        throw nn::IncompatibleCheckpoint("not a selector checkpoint: " + path);
    const auto& c = ck.header.at("config");
    SelectorConfig config;
    config.hidden_width = c.at("hidden_width");
    config.layers = c.at("layers");
    config.heads = c.at("heads");
    config.k = c.at("k");
    config.lambda_area = c.at("lambda_area");
    config.lambda_perimeter = c.at("lambda_perimeter");
    config.max_candidates = c.at("max_candidates");
    SelectorModel model(config);
    nn::restore_params(model.params(), ck);
    return model;
}

}  // namespace reassemble::selector
