#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "reassemble/geometry.hpp"
#include "reassemble/image.hpp"
#include "reassemble/nn.hpp"

namespace reassemble::datagen {

using geometry::RigidTransform2D;
using geometry::Vec2;
using nn::json;

class CutMissesRegion : public Error {
public:
    using Error::Error;
};
class FragmentVanished : public Error {
public:
    using Error::Error;
};
class SourceUnreadable : public Error {
public:
    using Error::Error;
};

struct CutSpec {
    int fourier_terms = 3;
    double amplitude_px = -1.0;  // negative selects 3% of the chord length
    double straight_prob = 0.5;
    int min_segments = 2;
    int max_segments = 5;
};

struct RealismSpec {
    int erosion_min = 1;
    int erosion_max = 5;
    double jitter_rotation_deg = 3.0;
    double jitter_translation_px = 3.0;
};

// ---------------------------------------------------------------------------
// Cut lines
// ---------------------------------------------------------------------------

struct Circle {
    Vec2 center;
    double radius = 0.0;
};

/// Circumscribed circle of the foreground: centroid plus max radius.
inline Circle circumscribed_circle(const BinaryMask& mask) {
    double sx = 0, sy = 0;
    size_t n = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y)) {
                sx += x;
                sy += y;
                ++n;
            }
    if (n == 0) throw CutMissesRegion("region is empty");
    Circle c;
    c.center = {sx / double(n), sy / double(n)};
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x)
            if (mask.at(x, y))
                c.radius = std::max(c.radius,
                                    (Vec2{double(x), double(y)} - c.center).norm());
    c.radius += 2.0;  // endpoints end up strictly outside the region
    return c;
}

/// Chord of the region's circumscribed circle, split into straight or
/// Fourier-perturbed segments. Offsets are applied along the chord normal and
/// vanish at segment ends, so the polyline is continuous and monotone along
/// the chord.
inline std::vector<Vec2> generate_cut_line(const BinaryMask& region, Rng& rng,
                                           const CutSpec& spec) {
    Circle circle = circumscribed_circle(region);
    double theta1 = rng.uniform(0, 2 * kPi);
    double theta2 = theta1 + rng.uniform(kPi / 2, 3 * kPi / 2);
    Vec2 a = circle.center + Vec2{std::cos(theta1), std::sin(theta1)} * circle.radius;
    Vec2 b = circle.center + Vec2{std::cos(theta2), std::sin(theta2)} * circle.radius;

    double chord = (b - a).norm();
    Vec2 dir = (b - a) / chord;
    Vec2 normal = dir.perp();
    double amplitude = spec.amplitude_px >= 0 ? spec.amplitude_px : 0.03 * chord;

    int segments = rng.uniform_int(spec.min_segments, spec.max_segments);
    std::vector<Vec2> line;
    line.push_back(a);
    for (int s = 0; s < segments; ++s) {
        double u0 = double(s) / segments;
        double u1 = double(s + 1) / segments;
        bool straight = rng.bernoulli(spec.straight_prob);
        std::vector<double> coeff;
        if (!straight)
            for (int nterm = 1; nterm <= spec.fourier_terms; ++nterm)
                coeff.push_back(rng.uniform(-amplitude / nterm, amplitude / nterm));

        double seg_len = chord * (u1 - u0);
        int samples = std::max(8, int(std::ceil(seg_len / 2.0)));
        for (int i = 1; i <= samples; ++i) {
            double local = double(i) / samples;
            double u = u0 + (u1 - u0) * local;
            double offset = 0.0;
            for (size_t nterm = 0; nterm < coeff.size(); ++nterm)
                offset += coeff[nterm] * std::sin(double(nterm + 1) * kPi * local);
            line.push_back(a + dir * (u * chord) + normal * offset);
        }
    }
    return line;
}

// ---------------------------------------------------------------------------
// Region splitting
// ---------------------------------------------------------------------------

/// Splits the mask into the two sides of the cut polyline. The polyline is
/// monotone along its chord, so each pixel is classified against the
/// interpolated normal offset (the chord line extends beyond the endpoints).
inline std::pair<BinaryMask, BinaryMask> split_region(const BinaryMask& mask,
                                                      const std::vector<Vec2>& polyline,
                                                      size_t min_area_px = 1) {
    if (polyline.size() < 2) throw CutMissesRegion("cut polyline too short");
    Vec2 a = polyline.front();
    Vec2 b = polyline.back();
    double chord = (b - a).norm();
    if (chord <= 0) throw CutMissesRegion("degenerate cut polyline");
    Vec2 dir = (b - a) / chord;
    Vec2 normal = dir.perp();

    std::vector<double> us, vs;
    us.reserve(polyline.size());
    vs.reserve(polyline.size());
    for (const Vec2& p : polyline) {
        double u = (p - a).dot(dir);
        if (!us.empty() && u <= us.back()) continue;  // enforce monotonicity
        us.push_back(u);
        vs.push_back((p - a).dot(normal));
    }

    auto offset_at = [&](double u) {
        if (u <= us.front() || u >= us.back()) return 0.0;  // chord extension
        auto it = std::upper_bound(us.begin(), us.end(), u);
        size_t hi = size_t(it - us.begin());
        size_t lo = hi - 1;
        double f = (u - us[lo]) / (us[hi] - us[lo]);
        return vs[lo] + f * (vs[hi] - vs[lo]);
    };

    BinaryMask side_a(mask.width, mask.height), side_b(mask.width, mask.height);
    size_t count_a = 0, count_b = 0;
    for (int y = 0; y < mask.height; ++y)
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.at(x, y)) continue;
            Vec2 p{double(x), double(y)};
            double u = (p - a).dot(dir);
            double v = (p - a).dot(normal);
            if (v >= offset_at(u)) {
                side_a.at(x, y) = 1;
                ++count_a;
            } else {
                side_b.at(x, y) = 1;
                ++count_b;
            }
        }
    if (count_a < min_area_px || count_b < min_area_px)
        throw CutMissesRegion("cut leaves a side empty or below the minimum area");
    return {side_a, side_b};
}

// ---------------------------------------------------------------------------
// Erosion
// ---------------------------------------------------------------------------

/// Binary erosion with the full 3x3 structuring element.
inline BinaryMask erode_fragment(const BinaryMask& mask, int iterations) {
    if (iterations < 1 || iterations > 5)
        throw Error("erosion iterations must lie in [1, 5]");
    BinaryMask cur = mask;
    for (int it = 0; it < iterations; ++it) {
        BinaryMask next(cur.width, cur.height);
        size_t count = 0;
        for (int y = 0; y < cur.height; ++y)
            for (int x = 0; x < cur.width; ++x) {
                bool keep = true;
                for (int dy = -1; dy <= 1 && keep; ++dy)
                    for (int dx = -1; dx <= 1; ++dx)
                        if (!cur.fg(x + dx, y + dy)) {
                            keep = false;
                            break;
                        }
                if (keep) {
                    next.at(x, y) = 1;
                    ++count;
                }
            }
        if (count == 0) throw FragmentVanished("erosion emptied the fragment");
        cur = std::move(next);
    }
    return cur;
}

// ---------------------------------------------------------------------------
// Pose jitter
// ---------------------------------------------------------------------------

/// One of rotation (uniform within +-jitter_rotation_deg, in place) or
/// translation (uniform within +-jitter_translation_px per axis), chosen
/// uniformly and composed into the ground-truth pose.
inline RigidTransform2D jitter_fragment(const RigidTransform2D& pose, Rng& rng,
                                        const RealismSpec& spec, double mm_per_px = 1.0) {
    bool rotate = rng.bernoulli(0.5);
    double dtheta = rng.uniform(-spec.jitter_rotation_deg, spec.jitter_rotation_deg);
    double dx = rng.uniform(-spec.jitter_translation_px, spec.jitter_translation_px);
    double dy = rng.uniform(-spec.jitter_translation_px, spec.jitter_translation_px);

    RigidTransform2D out = pose;
    if (rotate) {
        RigidTransform2D rot = RigidTransform2D::from_angle_deg(dtheta);
        out.rotation = {rot.rotation.x * pose.rotation.x - rot.rotation.y * pose.rotation.y,
                        rot.rotation.y * pose.rotation.x + rot.rotation.x * pose.rotation.y};
    } else {
        out.translation.x += dx * mm_per_px;
        out.translation.y += dy * mm_per_px;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Puzzle generation
// ---------------------------------------------------------------------------

struct GeneratedPiece {
    std::string id;
    ImageRgba image;     // cropped RGBA; alpha carries the eroded mask
    BinaryMask mask;     // same crop
    Vec2 centroid_px;    // local-frame origin within the crop
    Vec2 crop_origin_px; // crop position on the source canvas (pre-jitter)
    RigidTransform2D gt_pose_mm;
};

struct GeneratedPuzzle {
    std::string id;
    int canvas_w = 0;
    int canvas_h = 0;
    double mm_per_px = 1.0;
    uint64_t seed = 0;
    std::vector<GeneratedPiece> pieces;
};

namespace detail {

inline bool single_component(const BinaryMask& mask) {
    int fx = 0, fy = 0;
    size_t size = 0;
    try {
        return geometry::detail::count_components_4(mask, &fx, &fy, &size) == 1 && size >= 16;
    } catch (...) {
        return false;
    }
}

inline size_t mask_area(const BinaryMask& m) { return m.count(); }

}  // namespace detail

/// Cuts the source region into `target_pieces` fragments by recursively
/// cutting the largest remaining fragment, then applies erosion and pose
/// jitter. Pure function of (source, specs, rng state).
inline GeneratedPuzzle generate_puzzle(const ImageRgba& source, int target_pieces, Rng& rng,
                                       const CutSpec& cut_spec, const RealismSpec& realism,
                                       double mm_per_px = 1.0, double min_area_frac = 0.005) {
    GeneratedPuzzle puzzle;
    puzzle.canvas_w = source.width;
    puzzle.canvas_h = source.height;
    puzzle.mm_per_px = mm_per_px;

    BinaryMask full(source.width, source.height);
    for (int y = 0; y < source.height; ++y)
        for (int x = 0; x < source.width; ++x)
            full.at(x, y) = source.px(x, y)[3] > 0 ? 1 : 0;
    const size_t min_area = size_t(min_area_frac * source.width * source.height);

    std::vector<BinaryMask> fragments{full};
    std::vector<bool> cuttable{true};
    while (int(fragments.size()) < target_pieces) {
        // Largest remaining cuttable fragment.
        int best = -1;
        size_t best_area = 0;
        for (size_t i = 0; i < fragments.size(); ++i) {
            if (!cuttable[i]) continue;
            size_t area = detail::mask_area(fragments[i]);
            if (area > best_area) {
                best_area = area;
                best = int(i);
            }
        }
        if (best < 0) break;

        bool done = false;
        for (int attempt = 0; attempt < 20 && !done; ++attempt) {
            std::vector<Vec2> cut = generate_cut_line(fragments[size_t(best)], rng, cut_spec);
            try {
                auto [sa, sb] = split_region(fragments[size_t(best)], cut, min_area);
                if (!detail::single_component(sa) || !detail::single_component(sb)) continue;
                fragments[size_t(best)] = std::move(sa);
                fragments.push_back(std::move(sb));
                cuttable.push_back(true);
                done = true;
            } catch (const CutMissesRegion&) {
            }
        }
        if (!done) cuttable[size_t(best)] = false;
    }

    int piece_no = 0;
    for (const BinaryMask& fragment : fragments) {
        int iterations = rng.uniform_int(realism.erosion_min, realism.erosion_max);
        BinaryMask eroded;
        try {
            eroded = erode_fragment(fragment, iterations);
        } catch (const FragmentVanished&) {
            continue;  // sliver gone; drop it
        }
        if (!detail::single_component(eroded)) continue;

        // Tight crop.
        int x0 = eroded.width, y0 = eroded.height, x1 = -1, y1 = -1;
        for (int y = 0; y < eroded.height; ++y)
            for (int x = 0; x < eroded.width; ++x)
                if (eroded.at(x, y)) {
                    x0 = std::min(x0, x);
                    y0 = std::min(y0, y);
                    x1 = std::max(x1, x);
                    y1 = std::max(y1, y);
                }

        GeneratedPiece piece;
        char buf[8];
        std::snprintf(buf, sizeof(buf), "p%02d", piece_no++);
        piece.id = buf;
        piece.crop_origin_px = {double(x0), double(y0)};
        piece.image = ImageRgba(x1 - x0 + 1, y1 - y0 + 1);
        piece.mask = BinaryMask(piece.image.width, piece.image.height);
        double cx = 0, cy = 0;
        size_t n = 0;
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                if (!eroded.at(x, y)) continue;
                const uint8_t* src = source.px(x, y);
                uint8_t* dst = piece.image.px(x - x0, y - y0);
                dst[0] = src[0];
                dst[1] = src[1];
                dst[2] = src[2];
                dst[3] = 255;
                piece.mask.at(x - x0, y - y0) = 1;
                cx += x - x0;
                cy += y - y0;
                ++n;
            }
        piece.centroid_px = {cx / double(n), cy / double(n)};

        RigidTransform2D pose;
        pose.translation = {(piece.centroid_px.x + x0) * mm_per_px,
                            (piece.centroid_px.y + y0) * mm_per_px};
        piece.gt_pose_mm = jitter_fragment(pose, rng, realism, mm_per_px);
        puzzle.pieces.push_back(std::move(piece));
    }
    return puzzle;
}

// ---------------------------------------------------------------------------
// Procedural source imagery (keeps the test suite self-contained)
// ---------------------------------------------------------------------------

inline ImageRgba generate_source_image(int w, int h, uint64_t seed) {
    Rng rng(seed);
    // Coarse random color lattices upsampled bilinearly, two octaves plus a
    // fine speckle so local patches stay distinctive.
    auto lattice = [&](int cells) {
        GrayImage g(cells, cells);
        for (double& v : g.data) v = rng.uniform(0.0, 1.0);
        return g;
    };
    GrayImage planes[3][2];
    for (int c = 0; c < 3; ++c) {
        planes[c][0] = resize_bilinear(lattice(5), w, h);
        planes[c][1] = resize_bilinear(lattice(17), w, h);
    }
    ImageRgba img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            uint8_t* p = img.px(x, y);
            for (int c = 0; c < 3; ++c) {
                double v = 0.65 * planes[c][0].at(x, y) + 0.3 * planes[c][1].at(x, y) +
                           0.05 * rng.uniform(0.0, 1.0);
                p[c] = uint8_t(std::clamp(v * 255.0, 0.0, 255.0));
            }
            p[3] = 255;
        }
    return img;
}

// ---------------------------------------------------------------------------
// Dataset on disk
// ---------------------------------------------------------------------------

struct DatasetConfig {
    int n_puzzles = 100;
    uint64_t seed = 7;
    double mm_per_px = 1.0;
    int min_pieces = 6;
    int max_pieces = 12;  // uniform; mean 9 pieces per puzzle
    CutSpec cut;
    RealismSpec realism;
    double train_fraction = 0.8;
};

inline void write_puzzle(const std::filesystem::path& dir, const GeneratedPuzzle& puzzle) {
    std::filesystem::create_directories(dir / "pieces");
    json gt = json::array();
    for (const GeneratedPiece& piece : puzzle.pieces) {
        write_png((dir / "pieces" / (piece.id + ".png")).string(), piece.image);
        gt.push_back({{"id", piece.id},
                      {"translation_mm",
                       {piece.gt_pose_mm.translation.x, piece.gt_pose_mm.translation.y}},
                      {"rotation_deg", piece.gt_pose_mm.angle_deg()}});
    }
    {
        std::ofstream out(dir / "ground_truth.json");
        out << json{{"schema_version", 1}, {"pieces", gt}}.dump(2) << "\n";
    }
    {
        std::ofstream out(dir / "meta.json");
        out << json{{"schema_version", 1},
                    {"canvas_px", {puzzle.canvas_w, puzzle.canvas_h}},
                    {"mm_per_px", puzzle.mm_per_px}}
                   .dump(2)
            << "\n";
    }
}

/// Generates n puzzles from the given sources (round-robin), writes the
/// dataset layout and the train/test manifest. Byte-identical for a fixed
/// (sources, config) pair.
inline json generate_dataset(const std::vector<std::string>& source_paths,
                             const std::string& out_dir, const DatasetConfig& config) {
    if (source_paths.empty()) throw SourceUnreadable("no source images given");
    std::vector<ImageRgba> sources;
    for (const std::string& path : source_paths) {
        try {
            sources.push_back(read_png(path));
        } catch (const Error& e) {
            throw SourceUnreadable("cannot read source image " + path + ": " + e.what());
        }
    }

    std::filesystem::path root(out_dir);
    json train_ids = json::array(), test_ids = json::array();
    for (int i = 0; i < config.n_puzzles; ++i) {
        Rng rng = Rng::substream(config.seed, uint64_t(i));
        int target = rng.uniform_int(config.min_pieces, config.max_pieces);
        GeneratedPuzzle puzzle =
            generate_puzzle(sources[size_t(i) % sources.size()], target, rng, config.cut,
                            config.realism, config.mm_per_px);
        char buf[16];
        std::snprintf(buf, sizeof(buf), "puzzle_%04d", i);
        puzzle.id = buf;
        puzzle.seed = config.seed;

        bool is_test = (i % 5) == 4;  // deterministic 80:20 split
        if (config.train_fraction >= 1.0) is_test = false;
        const char* split = is_test ? "test" : "train";
        (is_test ? test_ids : train_ids).push_back(puzzle.id);
        write_puzzle(root / split / puzzle.id, puzzle);
    }

    json manifest{{"schema_version", 1},
                  {"seed", config.seed},
                  {"n_puzzles", config.n_puzzles},
                  {"mm_per_px", config.mm_per_px},
                  {"pieces_range", {config.min_pieces, config.max_pieces}},
                  {"erosion_range", {config.realism.erosion_min, config.realism.erosion_max}},
                  {"jitter_rotation_deg", config.realism.jitter_rotation_deg},
                  {"jitter_translation_px", config.realism.jitter_translation_px},
                  {"splits", {{"train", train_ids}, {"test", test_ids}}}};
    std::filesystem::create_directories(root);
    std::ofstream out(root / "manifest.json");
    out << manifest.dump(2) << "\n";
    return manifest;
}

}  // namespace reassemble::datagen
