#pragma once

#include <cstring>
#include <fstream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "reassemble/tape.hpp"

namespace reassemble::nn {

using json = nlohmann::json;

class IncompatibleCheckpoint : public Error {
public:
    using Error::Error;
};

// ---------------------------------------------------------------------------
// Parameters and optimizer
// ---------------------------------------------------------------------------

struct Parameter {
    std::string name;
    Mat value;
    Mat adam_m;
    Mat adam_v;

    Parameter() = default;
    Parameter(std::string n, Mat v)
        : name(std::move(n)),
          value(std::move(v)),
          adam_m(Mat::Zero(value.rows(), value.cols())),
          adam_v(Mat::Zero(value.rows(), value.cols())) {}
};

/// Named parameter collection. Models register parameters here so training,
/// checkpointing and gradient checks can enumerate them uniformly.
class ParamSet {
public:
    Parameter& add(const std::string& name, Mat value) {
        params_.push_back(std::make_unique<Parameter>(name, std::move(value)));
        return *params_.back();
    }

    std::vector<Parameter*> all() {
        std::vector<Parameter*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }
    std::vector<const Parameter*> all() const {
        std::vector<const Parameter*> out;
        out.reserve(params_.size());
        for (auto& p : params_) out.push_back(p.get());
        return out;
    }

    Parameter* find(const std::string& name) {
        for (auto& p : params_)
            if (p->name == name) return p.get();
        return nullptr;
    }

    size_t count() const { return params_.size(); }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

/// Bindings between persistent parameters and the leaves of one tape pass.
struct ParamBinding {
    std::vector<std::pair<Parameter*, Var>> entries;

    Var bind(Tape& t, Parameter& p) {
        Var v = t.push(p.value);
        entries.push_back({&p, v});
        return v;
    }
};

/// Adam with bias correction; the adaptive-moment optimizer used throughout.
class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    void step(Tape& t, const ParamBinding& binding) {
        // A parameter may be bound several times on one tape (e.g. once per
        // batch element); sum those gradients before the update.
        std::map<Parameter*, Mat> grads;
        for (const auto& [p, v] : binding.entries) {
            if (!t.has_grad(v)) continue;
            auto it = grads.find(p);
            if (it == grads.end())
                grads.emplace(p, t.grad(v));
            else
                it->second += t.grad(v);
        }
        if (grads.empty()) return;
        ++step_count_;
        double bc1 = 1.0 - std::pow(beta1_, double(step_count_));
        double bc2 = 1.0 - std::pow(beta2_, double(step_count_));
        for (auto& [p, g] : grads) {
            p->adam_m = beta1_ * p->adam_m + (1.0 - beta1_) * g;
            p->adam_v = beta2_ * p->adam_v + (1.0 - beta2_) * g.cwiseProduct(g);
            Mat mhat = p->adam_m / bc1;
            Mat vhat = p->adam_v / bc2;
            p->value -= lr_ * mhat.cwiseQuotient((vhat.cwiseSqrt().array() + eps_).matrix());
        }
    }

    int64_t step_count() const { return step_count_; }
    void set_step_count(int64_t s) { step_count_ = s; }
    double learning_rate() const { return lr_; }

private:
    double lr_, beta1_, beta2_, eps_;
    int64_t step_count_ = 0;
};

inline Mat init_uniform(Rng& rng, int rows, int cols, double scale) {
    Mat m(rows, cols);
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) m(r, c) = rng.uniform(-scale, scale);
    return m;
}

/// Xavier-uniform initialization.
inline Mat init_linear(Rng& rng, int in_dim, int out_dim) {
    return init_uniform(rng, in_dim, out_dim, std::sqrt(6.0 / double(in_dim + out_dim)));
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

struct LinearWeights {
    Parameter* w = nullptr;  // [in x out]
    Parameter* b = nullptr;  // [1 x out]

    static LinearWeights create(ParamSet& ps, const std::string& prefix, int in_dim, int out_dim,
                                Rng& rng) {
        LinearWeights lw;
        lw.w = &ps.add(prefix + ".w", init_linear(rng, in_dim, out_dim));
        lw.b = &ps.add(prefix + ".b", Mat::Zero(1, out_dim));
        return lw;
    }
};

inline Var linear(Tape& t, ParamBinding& bind, Var x, const LinearWeights& lw) {
    return add_rowvec(t, matmul(t, x, bind.bind(t, *lw.w)), bind.bind(t, *lw.b));
}

struct LayerNormWeights {
    Parameter* gamma = nullptr;
    Parameter* beta = nullptr;

    static LayerNormWeights create(ParamSet& ps, const std::string& prefix, int dim) {
        LayerNormWeights w;
        w.gamma = &ps.add(prefix + ".gamma", Mat::Ones(1, dim));
        w.beta = &ps.add(prefix + ".beta", Mat::Zero(1, dim));
        return w;
    }
};

inline Var layernorm(Tape& t, ParamBinding& bind, Var x, const LayerNormWeights& w) {
    return layernorm_rows(t, x, bind.bind(t, *w.gamma), bind.bind(t, *w.beta));
}

struct AttentionWeights {
    LinearWeights q, k, v, o;

    static AttentionWeights create(ParamSet& ps, const std::string& prefix, int dim, Rng& rng) {
        AttentionWeights w;
        w.q = LinearWeights::create(ps, prefix + ".q", dim, dim, rng);
        w.k = LinearWeights::create(ps, prefix + ".k", dim, dim, rng);
        w.v = LinearWeights::create(ps, prefix + ".v", dim, dim, rng);
        w.o = LinearWeights::create(ps, prefix + ".o", dim, dim, rng);
        return w;
    }
};

/// Multi-head attention over tokens x [T x d]. `allowed` is a 0/1 matrix; a
/// query row attends only where allowed != 0. Rows with no allowed entries
/// contribute zero. Optionally captures the per-head attention matrices.
inline Var multihead_attention(Tape& t, ParamBinding& bind, Var x, const Mat& allowed,
                               const AttentionWeights& w, int heads,
                               std::vector<Mat>* capture_attention = nullptr) {
    const int dim = int(t.val(x).cols());
    if (dim % heads != 0) throw Error("attention width must be divisible by head count");
    const int dh = dim / heads;

    Var q = linear(t, bind, x, w.q);
    Var k = linear(t, bind, x, w.k);
    Var v = linear(t, bind, x, w.v);

    std::vector<Var> head_outputs;
    head_outputs.reserve(heads);
    for (int h = 0; h < heads; ++h) {
        Var qh = slice_cols(t, q, h * dh, dh);
        Var kh = slice_cols(t, k, h * dh, dh);
        Var vh = slice_cols(t, v, h * dh, dh);
        Var scores = scale(t, matmul_nt(t, qh, kh), 1.0 / std::sqrt(double(dh)));
        Var attn = softmax_rows_masked(t, scores, allowed);
        if (capture_attention) capture_attention->push_back(t.val(attn));
        head_outputs.push_back(matmul(t, attn, vh));
        if (!t.grad_enabled()) {
            t.release(scores);
            t.release(attn);
        }
    }
    Var cat = heads == 1 ? head_outputs[0] : concat_cols(t, head_outputs);
    return linear(t, bind, cat, w.o);
}

struct EncoderBlockWeights {
    LayerNormWeights ln1, ln2;
    AttentionWeights attn;
    LinearWeights ffn1, ffn2;

    static EncoderBlockWeights create(ParamSet& ps, const std::string& prefix, int dim,
                                      int ffn_dim, Rng& rng) {
        EncoderBlockWeights w;
        w.ln1 = LayerNormWeights::create(ps, prefix + ".ln1", dim);
        w.attn = AttentionWeights::create(ps, prefix + ".attn", dim, rng);
        w.ln2 = LayerNormWeights::create(ps, prefix + ".ln2", dim);
        w.ffn1 = LinearWeights::create(ps, prefix + ".ffn1", dim, ffn_dim, rng);
        w.ffn2 = LinearWeights::create(ps, prefix + ".ffn2", ffn_dim, dim, rng);
        return w;
    }
};

/// Pre-norm residual transformer block: x + Attn(LN(x)), then x + FFN(LN(x)).
/// With all-zero weights both sublayers vanish and the block is the identity.
inline Var encoder_block(Tape& t, ParamBinding& bind, Var x, const Mat& allowed,
                         const EncoderBlockWeights& w, int heads,
                         std::vector<Mat>* capture_attention = nullptr) {
    Var a = multihead_attention(t, bind, layernorm(t, bind, x, w.ln1), allowed, w.attn, heads,
                                capture_attention);
    Var x1 = add(t, x, a);
    Var f = linear(t, bind, gelu(t, linear(t, bind, layernorm(t, bind, x1, w.ln2), w.ffn1)), w.ffn2);
    return add(t, x1, f);
}

// ---------------------------------------------------------------------------
// Convolution (im2col)
// ---------------------------------------------------------------------------

struct ConvShape {
    int channels, height, width;
    int size() const { return channels * height * width; }
};

struct Conv2dWeights {
    Parameter* w = nullptr;  // [C_out x C_in*kh*kw]
    Parameter* b = nullptr;  // [1 x C_out]
    int kernel = 3;
    int stride = 2;
    int pad = 1;

    static Conv2dWeights create(ParamSet& ps, const std::string& prefix, int c_in, int c_out,
                                int kernel, int stride, int pad, Rng& rng) {
        Conv2dWeights w;
        w.kernel = kernel;
        w.stride = stride;
        w.pad = pad;
        double scale = std::sqrt(2.0 / double(c_in * kernel * kernel));
        w.w = &ps.add(prefix + ".w", init_uniform(rng, c_out, c_in * kernel * kernel, scale));
        w.b = &ps.add(prefix + ".b", Mat::Zero(1, c_out));
        return w;
    }
};

inline ConvShape conv_output_shape(const ConvShape& in, const Conv2dWeights& w, int c_out) {
    int ho = (in.height + 2 * w.pad - w.kernel) / w.stride + 1;
    int wo = (in.width + 2 * w.pad - w.kernel) / w.stride + 1;
    return {c_out, ho, wo};
}

namespace detail {

inline Mat im2col(const Mat& batch, int sample, const ConvShape& in, int kernel, int stride,
                  int pad, int ho, int wo) {
    Mat col = Mat::Zero(in.channels * kernel * kernel, ho * wo);
    for (int c = 0; c < in.channels; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
                int row = (c * kernel + ky) * kernel + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= in.height) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= in.width) continue;
                        col(row, oy * wo + ox) = batch(sample, (c * in.height + iy) * in.width + ix);
                    }
                }
            }
    return col;
}

inline void col2im_add(Mat& grad_batch, int sample, const Mat& col_grad, const ConvShape& in,
                       int kernel, int stride, int pad, int ho, int wo) {
    for (int c = 0; c < in.channels; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
                int row = (c * kernel + ky) * kernel + kx;
                for (int oy = 0; oy < ho; ++oy) {
                    int iy = oy * stride + ky - pad;
                    if (iy < 0 || iy >= in.height) continue;
                    for (int ox = 0; ox < wo; ++ox) {
                        int ix = ox * stride + kx - pad;
                        if (ix < 0 || ix >= in.width) continue;
                        grad_batch(sample, (c * in.height + iy) * in.width + ix) +=
                            col_grad(row, oy * wo + ox);
                    }
                }
            }
}

}  // namespace detail

/// Batched conv. x rows are flattened (channel, y, x) images; output rows are
/// flattened (c_out, y, x) feature maps.
inline Var conv2d(Tape& t, ParamBinding& bind, Var x, const Conv2dWeights& cw, const ConvShape& in) {
    const int c_out = int(cw.w->value.rows());
    ConvShape out_shape = conv_output_shape(in, cw, c_out);

    Var wv = bind.bind(t, *cw.w);
    Var bv = bind.bind(t, *cw.b);
    const Mat& input = t.val(x);
    const int n = int(input.rows());

    auto cols = std::make_shared<std::vector<Mat>>();
    cols->reserve(size_t(n));
    const int pix_count = out_shape.height * out_shape.width;
    Mat out(n, out_shape.size());
    for (int i = 0; i < n; ++i) {
        Mat col = detail::im2col(input, i, in, cw.kernel, cw.stride, cw.pad, out_shape.height,
                                 out_shape.width);
        Mat y = t.val(wv) * col;  // [c_out x ho*wo]
        y.colwise() += Eigen::VectorXd(t.val(bv).row(0).transpose());
        for (int c = 0; c < out_shape.channels; ++c)
            for (int p = 0; p < pix_count; ++p) out(i, c * pix_count + p) = y(c, p);
        if (t.grad_enabled()) cols->push_back(std::move(col));
    }

    return t.push(std::move(out), [x, wv, bv, in, cw, out_shape, cols,
                                   out = Var{int(t.node_count())}](Tape& tp) {
        const Mat& g = tp.grad(out);
        const int n = int(g.rows());
        const int pix = out_shape.height * out_shape.width;
        Mat dw = Mat::Zero(tp.val(wv).rows(), tp.val(wv).cols());
        Mat db = Mat::Zero(1, out_shape.channels);
        Mat dx = Mat::Zero(n, in.size());
        for (int i = 0; i < n; ++i) {
            Mat gy(out_shape.channels, pix);
            for (int c = 0; c < out_shape.channels; ++c)
                for (int p = 0; p < pix; ++p) gy(c, p) = g(i, c * pix + p);
            const Mat& col = (*cols)[size_t(i)];
            dw += gy * col.transpose();
            db.row(0) += gy.rowwise().sum().transpose();
            Mat dcol = tp.val(wv).transpose() * gy;
            detail::col2im_add(dx, i, dcol, in, cw.kernel, cw.stride, cw.pad,
                               out_shape.height, out_shape.width);
        }
        tp.accumulate(wv, dw);
        tp.accumulate(bv, db);
        tp.accumulate(x, dx);
    });
}

// ---------------------------------------------------------------------------
// Timestep embedding
// ---------------------------------------------------------------------------

/// Standard sinusoidal embedding of an integer timestep, width must be even.
inline Mat sinusoidal_embedding(int timestep, int width) {
    Mat emb(1, width);
    const int half = width / 2;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        emb(0, 2 * i) = std::sin(timestep * freq);
        emb(0, 2 * i + 1) = std::cos(timestep * freq);
    }
    return emb;
}

// ---------------------------------------------------------------------------
// Checkpoint container: magic, version, JSON header, raw float64 tensors
// ---------------------------------------------------------------------------

constexpr char kCheckpointMagic[9] = "RNETCKP1";

inline void save_checkpoint(const std::string& path, json header,
                            const std::vector<const Parameter*>& params) {
    json tensors = json::array();
    for (const Parameter* p : params)
        tensors.push_back({{"name", p->name}, {"rows", p->value.rows()}, {"cols", p->value.cols()}});
    header["tensors"] = tensors;
    header["schema_version"] = 1;
    std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open checkpoint for writing: " + path);
    out.write(kCheckpointMagic, 8);
    uint64_t len = hs.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(hs.data(), std::streamsize(hs.size()));
    for (const Parameter* p : params) {
        // row-major serialization
        for (int r = 0; r < p->value.rows(); ++r)
            out.write(reinterpret_cast<const char*>(p->value.row(r).eval().data()),
                      std::streamsize(sizeof(double) * size_t(p->value.cols())));
    }
    if (!out) throw Error("short write while saving checkpoint: " + path);
}

struct Checkpoint {
    json header;
    std::map<std::string, Mat> tensors;
};

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IncompatibleCheckpoint("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw IncompatibleCheckpoint("bad checkpoint magic: " + path);
    uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string hs(len, '\0');
    in.read(hs.data(), std::streamsize(len));
    Checkpoint ck;
    ck.header = json::parse(hs, nullptr, false);
    if (ck.header.is_discarded()) throw IncompatibleCheckpoint("bad checkpoint header: " + path);
    for (const auto& tensor : ck.header.at("tensors")) {
        int rows = tensor.at("rows"), cols = tensor.at("cols");
        Mat m(rows, cols);
        std::vector<double> row;
        row.resize(size_t(cols));
        for (int r = 0; r < rows; ++r) {
            in.read(reinterpret_cast<char*>(row.data()), std::streamsize(sizeof(double) * size_t(cols)));
            for (int c = 0; c < cols; ++c) m(r, c) = row[size_t(c)];
        }
        ck.tensors[tensor.at("name")] = std::move(m);
    }
    if (!in) throw IncompatibleCheckpoint("truncated checkpoint: " + path);
    return ck;
}

/// Copies checkpoint tensors into an existing ParamSet, shape-checked.
inline void restore_params(ParamSet& ps, const Checkpoint& ck) {
    for (Parameter* p : ps.all()) {
        auto it = ck.tensors.find(p->name);
        if (it == ck.tensors.end())
            throw IncompatibleCheckpoint("checkpoint missing tensor: " + p->name);
        if (it->second.rows() != p->value.rows() || it->second.cols() != p->value.cols())
            throw IncompatibleCheckpoint("tensor shape mismatch: " + p->name);
        p->value = it->second;
    }
}

}  // namespace reassemble::nn
