#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "reassemble/geometry.hpp"
#include "reassemble/image.hpp"
#include "reassemble/nn.hpp"

namespace reassemble::features {

using geometry::Keypoint;
using geometry::Vec2;
using nn::Mat;
using nn::Var;

class KeypointOutsideImage : public Error {
public:
    using Error::Error;
};
class EncoderWeightsMissing : public Error {
public:
    using Error::Error;
};
class BadPatchShape : public Error {
public:
    using Error::Error;
};
class LengthMismatch : public Error {
public:
    using Error::Error;
};

struct TextureEncoderSpec {
    enum class Kind { BuiltinCnn, ExternalEmbeddings };
    Kind kind = Kind::BuiltinCnn;
    int embedding_width = 64;
    int patch_size = 32;

    void validate() const {
        if (patch_size < 8 || patch_size % 2 != 0)
            throw Error("patch_size must be even and >= 8");
        if (embedding_width < 8) throw Error("embedding_width must be >= 8");
    }
};

/// Fused per-keypoint features, one piece: rows are
/// [curvature, cos(angle), sin(angle), local..., global...].
struct FeatureSet {
    Mat h;
    int d_local = 0;
    int d_global = 0;

    int geometric_width() const { return 3; }
};

// ---------------------------------------------------------------------------
// Patch extraction
// ---------------------------------------------------------------------------

/// Square patch centered on the keypoint. Out-of-bounds samples replicate
/// edge pixels; fully transparent pixels come out black.
inline ImageRgba extract_local_patch(const ImageRgba& image, const Vec2& keypoint,
                                     int patch_size) {
    int cx = int(std::lround(keypoint.x));
    int cy = int(std::lround(keypoint.y));
    if (cx < 0 || cx >= image.width || cy < 0 || cy >= image.height)
        throw KeypointOutsideImage("keypoint lies outside the image");

    ImageRgba patch(patch_size, patch_size);
    const int half = patch_size / 2;
    for (int y = 0; y < patch_size; ++y) {
        int sy = std::clamp(cy + y - half, 0, image.height - 1);
        for (int x = 0; x < patch_size; ++x) {
            int sx = std::clamp(cx + x - half, 0, image.width - 1);
            const uint8_t* src = image.px(sx, sy);
            uint8_t* dst = patch.px(x, y);
            if (src[3] == 0) {
                dst[0] = dst[1] = dst[2] = 0;
                dst[3] = 0;
            } else {
                dst[0] = src[0];
                dst[1] = src[1];
                dst[2] = src[2];
                dst[3] = src[3];
            }
        }
    }
    return patch;
}

namespace detail {

/// Flattened (channel, y, x) RGB row in [0, 1], transparent pixels black.
inline Eigen::RowVectorXd flatten_rgb(const ImageRgba& img) {
    Eigen::RowVectorXd row(3 * img.width * img.height);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.height; ++y)
            for (int x = 0; x < img.width; ++x) {
                const uint8_t* p = img.px(x, y);
                double v = p[3] == 0 ? 0.0 : p[c] / 255.0;
                row[(c * img.height + y) * img.width + x] = v;
            }
    return row;
}

/// Masked, square-padded (centered), bilinearly resized piece image.
inline ImageRgba normalize_piece_image(const ImageRgba& piece, int out_size) {
    int side = std::max(piece.width, piece.height);
    ImageRgba square(side, side);
    int ox = (side - piece.width) / 2;
    int oy = (side - piece.height) / 2;
    for (int y = 0; y < piece.height; ++y)
        for (int x = 0; x < piece.width; ++x) {
            const uint8_t* src = piece.px(x, y);
            uint8_t* dst = square.px(x + ox, y + oy);
            if (src[3] == 0) continue;
            dst[0] = src[0];
            dst[1] = src[1];
            dst[2] = src[2];
            dst[3] = src[3];
        }

    ImageRgba out(out_size, out_size);
    for (int c = 0; c < 4; ++c) {
        GrayImage plane(side, side);
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) plane.at(x, y) = square.px(x, y)[c];
        GrayImage resized = resize_bilinear(plane, out_size, out_size);
        for (int y = 0; y < out_size; ++y)
            for (int x = 0; x < out_size; ++x)
                out.px(x, y)[c] = uint8_t(std::clamp(resized.at(x, y), 0.0, 255.0));
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Builtin convolutional encoder (shared trunk, separate heads)
// ---------------------------------------------------------------------------

class TextureEncoder {
public:
    static constexpr int kGlobalInput = 128;

    TextureEncoder() = default;

    TextureEncoder(const TextureEncoderSpec& spec, uint64_t seed) : spec_(spec) {
        spec_.validate();
        if (spec_.kind != TextureEncoderSpec::Kind::BuiltinCnn)
            throw Error("TextureEncoder is the builtin path; use sidecars for external mode");
        Rng rng(seed);
        const int chans[6] = {3, 16, 32, 32, 32, 32};
        for (int l = 0; l < 5; ++l)
            convs_.push_back(nn::Conv2dWeights::create(params_, "texture.conv" + std::to_string(l),
                                                       chans[l], chans[l + 1], 3, 2, 1, rng));
        // 32x32 patches collapse to 1x1x32; the 128x128 global image to 4x4x32.
        local_head_ = nn::LinearWeights::create(params_, "texture.local_head",
                                                trunk_flat_size(spec_.patch_size),
                                                spec_.embedding_width, rng);
        global_head_ = nn::LinearWeights::create(params_, "texture.global_head",
                                                 trunk_flat_size(kGlobalInput),
                                                 spec_.embedding_width, rng);
        initialized_ = true;
    }

    bool initialized() const { return initialized_; }
    const TextureEncoderSpec& spec() const { return spec_; }
    nn::ParamSet& params() { return params_; }
    const nn::ParamSet& params() const { return params_; }

    static int trunk_flat_size(int input_size) {
        int s = input_size;
        for (int l = 0; l < 5; ++l) s = (s + 2 * 1 - 3) / 2 + 1;
        return 32 * s * s;
    }

    /// Local embeddings for a batch of patches (rows from flatten_rgb).
    Var encode_local_batch(nn::Tape& t, nn::ParamBinding& bind, const Mat& patch_rows) const {
        require_weights();
        if (patch_rows.cols() != 3 * spec_.patch_size * spec_.patch_size)
            throw BadPatchShape("patch pixel count does not match patch_size");
        Var x = trunk(t, bind, t.constant(patch_rows), spec_.patch_size);
        return nn::tanh_op(t, nn::linear(t, bind, x, local_head_));
    }

    Var encode_global_batch(nn::Tape& t, nn::ParamBinding& bind, const Mat& image_rows) const {
        require_weights();
        if (image_rows.cols() != 3 * kGlobalInput * kGlobalInput)
            throw BadPatchShape("global input must be 128x128 RGB");
        Var x = trunk(t, bind, t.constant(image_rows), kGlobalInput);
        return nn::tanh_op(t, nn::linear(t, bind, x, global_head_));
    }

    Eigen::VectorXd encode_local(const ImageRgba& patch) const {
        if (patch.width != spec_.patch_size || patch.height != spec_.patch_size)
            throw BadPatchShape("patch must be patch_size x patch_size");
        nn::Tape t(false);
        nn::ParamBinding bind;
        Var e = encode_local_batch(t, bind, detail::flatten_rgb(patch));
        return t.val(e).row(0).transpose();
    }

    /// Whole-piece embedding of the masked, square-padded, 128x128-resized
    /// piece.
    Eigen::VectorXd encode_global(const ImageRgba& piece) const {
        require_weights();
        ImageRgba norm = detail::normalize_piece_image(piece, kGlobalInput);
        nn::Tape t(false);
        nn::ParamBinding bind;
        Var e = encode_global_batch(t, bind, detail::flatten_rgb(norm));
        return t.val(e).row(0).transpose();
    }

private:
    Var trunk(nn::Tape& t, nn::ParamBinding& bind, Var x, int input_size) const {
        nn::ConvShape shape{3, input_size, input_size};
        for (size_t l = 0; l < convs_.size(); ++l) {
            x = nn::gelu(t, nn::conv2d(t, bind, x, convs_[l], shape));
            shape = nn::conv_output_shape(shape, convs_[l], int(convs_[l].w->value.rows()));
        }
        return x;
    }

    void require_weights() const {
        if (!initialized_)
            throw EncoderWeightsMissing("builtin texture encoder has no weights");
    }

    TextureEncoderSpec spec_;
    nn::ParamSet params_;
    std::vector<nn::Conv2dWeights> convs_;
    nn::LinearWeights local_head_, global_head_;
    bool initialized_ = false;
};

// ---------------------------------------------------------------------------
// External embedding sidecars: <piece_id>.emb.json
// ---------------------------------------------------------------------------

struct ExternalEmbeddings {
    int width = 0;
    Eigen::VectorXd global;
    Mat local;  // [K x width], contour order
};

inline ExternalEmbeddings read_embedding_sidecar(const std::string& path) {
    std::ifstream in(path);
    if (!in)
        throw EncoderWeightsMissing("embedding sidecar not found: " + path);
    nn::json j = nn::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw Error("malformed embedding sidecar: " + path);

    ExternalEmbeddings e;
    e.width = j.at("width");
    const auto& g = j.at("global");
    e.global.resize(Eigen::Index(g.size()));
    for (size_t i = 0; i < g.size(); ++i) e.global[Eigen::Index(i)] = g[i];
    const auto& rows = j.at("local");
    e.local.resize(Eigen::Index(rows.size()), e.width);
    for (size_t r = 0; r < rows.size(); ++r) {
        if (int(rows[r].size()) != e.width)
            throw LengthMismatch("sidecar local row width mismatch");
        for (int c = 0; c < e.width; ++c) e.local(Eigen::Index(r), c) = rows[r][size_t(c)];
    }
    if (int(e.global.size()) != e.width) throw LengthMismatch("sidecar global width mismatch");
    return e;
}

inline void write_embedding_sidecar(const std::string& path, const ExternalEmbeddings& e) {
    nn::json j;
    j["width"] = e.width;
    j["global"] = std::vector<double>(e.global.data(), e.global.data() + e.global.size());
    nn::json rows = nn::json::array();
    for (int r = 0; r < e.local.rows(); ++r) {
        std::vector<double> row(size_t(e.local.cols()));
        for (int c = 0; c < e.local.cols(); ++c) row[size_t(c)] = e.local(r, c);
        rows.push_back(row);
    }
    j["local"] = rows;
    std::ofstream out(path);
    out << j.dump(2) << "\n";
}

// ---------------------------------------------------------------------------
// Assembly
// ---------------------------------------------------------------------------

/// h_i = [curvature, cos(angle), sin(angle), local_i, global]; the global
/// embedding is broadcast to every keypoint of the piece.
inline FeatureSet assemble_features(const std::vector<Keypoint>& keypoints, const Mat& local,
                                    const Eigen::VectorXd& global) {
    const int k = int(keypoints.size());
    if (k == 0) throw LengthMismatch("no keypoints to assemble");
    if (int(local.rows()) != k)
        throw LengthMismatch("one local embedding required per keypoint");

    FeatureSet fs;
    fs.d_local = int(local.cols());
    fs.d_global = int(global.size());
    fs.h.resize(k, 3 + fs.d_local + fs.d_global);
    for (int i = 0; i < k; ++i) {
        const Keypoint& kp = keypoints[size_t(i)];
        double phi = deg_to_rad(kp.edge_angle);
        fs.h(i, 0) = kp.curvature;
        fs.h(i, 1) = std::cos(phi);
        fs.h(i, 2) = std::sin(phi);
        fs.h.block(i, 3, 1, fs.d_local) = local.row(i);
        fs.h.block(i, 3 + fs.d_local, 1, fs.d_global) = global.transpose();
    }
    return fs;
}

}  // namespace reassemble::features
