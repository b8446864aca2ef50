#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <vector>

#include "reassemble/common.hpp"
#include "reassemble/image.hpp"

namespace reassemble::geometry {

class EmptyMask : public Error {
public:
    using Error::Error;
};
class MultipleComponents : public Error {
public:
    using Error::Error;
};
class EmptyContour : public Error {
public:
    using Error::Error;
};
class TooFewPoints : public Error {
public:
    using Error::Error;
};
class KTooLarge : public Error {
public:
    using Error::Error;
};
class NonUnitRotation : public Error {
public:
    using Error::Error;
};
class DegeneratePolygon : public Error {
public:
    using Error::Error;
};

struct Vec2 {
    double x = 0.0;
    double y = 0.0;

    Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
    Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
    Vec2 operator*(double s) const { return {x * s, y * s}; }
    Vec2 operator/(double s) const { return {x / s, y / s}; }
    Vec2& operator+=(const Vec2& o) {
        x += o.x;
        y += o.y;
        return *this;
    }
    double dot(const Vec2& o) const { return x * o.x + y * o.y; }
    double cross(const Vec2& o) const { return x * o.y - y * o.x; }
    double norm() const { return std::hypot(x, y); }
    double squared_norm() const { return x * x + y * y; }
    Vec2 normalized() const {
        double n = norm();
        return n > 0 ? Vec2{x / n, y / n} : Vec2{0, 0};
    }
    Vec2 perp() const { return {-y, x}; }
};

using Polygon = std::vector<Vec2>;

/// Closed fragment boundary, counter-clockwise (positive shoelace area).
struct Contour {
    std::vector<Vec2> points;
    bool closed = true;

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
};

struct Keypoint {
    Vec2 position;               // pixels, piece-local frame
    double curvature = 0.0;      // 1/pixels, unsigned
    double edge_angle = 0.0;     // degrees in [0, 360)
    int contour_index = 0;
};

/// Rigid 2D motion: p' = R(theta) * p + translation, rotation stored as
/// (cos theta, sin theta).
struct RigidTransform2D {
    Vec2 translation{0.0, 0.0};
    Vec2 rotation{1.0, 0.0};

    static RigidTransform2D identity() { return {}; }
    static RigidTransform2D from_angle_deg(double deg, Vec2 t = {0, 0}) {
        double r = deg_to_rad(deg);
        return {t, {std::cos(r), std::sin(r)}};
    }

    double angle_deg() const { return wrap_angle_deg(rad_to_deg(std::atan2(rotation.y, rotation.x))); }
    double rotation_norm_error() const { return std::abs(rotation.norm() - 1.0); }

    Vec2 apply(const Vec2& p) const {
        return {rotation.x * p.x - rotation.y * p.y + translation.x,
                rotation.y * p.x + rotation.x * p.y + translation.y};
    }

    RigidTransform2D inverse() const {
        Vec2 rinv{rotation.x, -rotation.y};
        Vec2 tinv{-(rinv.x * translation.x - rinv.y * translation.y),
                  -(rinv.y * translation.x + rinv.x * translation.y)};
        return {tinv, rinv};
    }

    /// Composition (a.compose(b))(p) == a(b(p)).
    RigidTransform2D compose(const RigidTransform2D& b) const {
        Vec2 r{rotation.x * b.rotation.x - rotation.y * b.rotation.y,
               rotation.x * b.rotation.y + rotation.y * b.rotation.x};
        Vec2 t{rotation.x * b.translation.x - rotation.y * b.translation.y + translation.x,
               rotation.y * b.translation.x + rotation.x * b.translation.y + translation.y};
        return {t, r};
    }

    RigidTransform2D normalized() const {
        RigidTransform2D r = *this;
        double n = rotation.norm();
        if (n > 0) r.rotation = rotation / n;
        return r;
    }
};

// ---------------------------------------------------------------------------
// Polygon measures
// ---------------------------------------------------------------------------

inline double polygon_signed_area(const Polygon& pts) {
    if (pts.size() < 3) throw TooFewPoints("polygon needs at least 3 points");
    double a = 0.0;
    for (size_t i = 0, n = pts.size(); i < n; ++i) {
        const Vec2& p = pts[i];
        const Vec2& q = pts[(i + 1) % n];
        a += p.x * q.y - q.x * p.y;
    }
    return 0.5 * a;
}

inline double polygon_area(const Polygon& pts) { return std::abs(polygon_signed_area(pts)); }

inline double polygon_perimeter(const Polygon& pts) {
    if (pts.size() < 3) throw TooFewPoints("polygon needs at least 3 points");
    double p = 0.0;
    for (size_t i = 0, n = pts.size(); i < n; ++i) p += (pts[(i + 1) % n] - pts[i]).norm();
    return p;
}

inline Vec2 polygon_centroid(const Polygon& pts) {
    Vec2 c{0, 0};
    for (const Vec2& p : pts) c += p;
    return pts.empty() ? c : c / double(pts.size());
}

struct BoundingBox {
    Vec2 lo{std::numeric_limits<double>::max(), std::numeric_limits<double>::max()};
    Vec2 hi{std::numeric_limits<double>::lowest(), std::numeric_limits<double>::lowest()};

    void extend(const Vec2& p) {
        lo.x = std::min(lo.x, p.x);
        lo.y = std::min(lo.y, p.y);
        hi.x = std::max(hi.x, p.x);
        hi.y = std::max(hi.y, p.y);
    }
    double width() const { return hi.x - lo.x; }
    double height() const { return hi.y - lo.y; }
    double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
    bool valid() const { return hi.x >= lo.x && hi.y >= lo.y; }
};

inline BoundingBox polygon_bbox(const Polygon& pts) {
    BoundingBox b;
    for (const Vec2& p : pts) b.extend(p);
    return b;
}

// ---------------------------------------------------------------------------
// Rigid application
// ---------------------------------------------------------------------------

inline std::vector<Vec2> apply_transform(const std::vector<Vec2>& pts, const RigidTransform2D& t) {
    if (t.rotation_norm_error() > 1e-9)
        throw NonUnitRotation("rotation vector must have unit norm");
    std::vector<Vec2> out;
    out.reserve(pts.size());
    for (const Vec2& p : pts) out.push_back(t.apply(p));
    return out;
}

// ---------------------------------------------------------------------------
// Arc-length utilities
// ---------------------------------------------------------------------------

/// Cumulative arc length over the closed polyline; result has size n+1 with
/// table[0] = 0 and table[n] = total perimeter.
inline std::vector<double> arclength_table(const std::vector<Vec2>& pts) {
    std::vector<double> t(pts.size() + 1, 0.0);
    for (size_t i = 0; i < pts.size(); ++i)
        t[i + 1] = t[i] + (pts[(i + 1) % pts.size()] - pts[i]).norm();
    return t;
}

/// Point on the closed polyline at arc length s (wrapped); also reports the
/// index of the nearest vertex.
inline Vec2 point_at_arclength(const std::vector<Vec2>& pts, const std::vector<double>& table,
                               double s, int* nearest_vertex = nullptr) {
    double total = table.back();
    s = std::fmod(s, total);
    if (s < 0) s += total;
    auto it = std::upper_bound(table.begin(), table.end(), s);
    size_t seg = size_t(std::max<ptrdiff_t>(0, (it - table.begin()) - 1));
    seg = std::min(seg, pts.size() - 1);
    double seg_len = table[seg + 1] - table[seg];
    double frac = seg_len > 0 ? (s - table[seg]) / seg_len : 0.0;
    if (nearest_vertex) *nearest_vertex = int(frac < 0.5 ? seg : (seg + 1) % pts.size());
    const Vec2& a = pts[seg];
    const Vec2& b = pts[(seg + 1) % pts.size()];
    return a + (b - a) * frac;
}

inline double point_segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
    Vec2 ab = b - a;
    double len2 = ab.squared_norm();
    if (len2 <= 0) return (p - a).norm();
    double t = std::clamp((p - a).dot(ab) / len2, 0.0, 1.0);
    return (p - (a + ab * t)).norm();
}

inline double point_polyline_distance(const Vec2& p, const std::vector<Vec2>& pts) {
    double best = std::numeric_limits<double>::max();
    for (size_t i = 0, n = pts.size(); i < n; ++i)
        best = std::min(best, point_segment_distance(p, pts[i], pts[(i + 1) % n]));
    return best;
}

// ---------------------------------------------------------------------------
// Contour extraction (Moore boundary tracing)
// ---------------------------------------------------------------------------

namespace detail {

inline int count_components_4(const BinaryMask& mask, int* first_x, int* first_y, size_t* size_out) {
    std::vector<uint8_t> seen(mask.data.size(), 0);
    int components = 0;
    size_t first_size = 0;
    int fx = -1, fy = -1;
    for (int y = 0; y < mask.height; ++y) {
        for (int x = 0; x < mask.width; ++x) {
            if (!mask.fg(x, y) || seen[size_t(y) * mask.width + x]) continue;
            ++components;
            if (components > 1) return components;
            fx = x;
            fy = y;
            std::queue<std::pair<int, int>> q;
            q.push({x, y});
            seen[size_t(y) * mask.width + x] = 1;
            size_t sz = 0;
            while (!q.empty()) {
                auto [cx, cy] = q.front();
                q.pop();
                ++sz;
                const int dx[4] = {1, -1, 0, 0};
                const int dy[4] = {0, 0, 1, -1};
                for (int d = 0; d < 4; ++d) {
                    int nx = cx + dx[d], ny = cy + dy[d];
                    if (mask.fg(nx, ny) && !seen[size_t(ny) * mask.width + nx]) {
                        seen[size_t(ny) * mask.width + nx] = 1;
                        q.push({nx, ny});
                    }
                }
            }
            first_size = sz;
        }
    }
    *first_x = fx;
    *first_y = fy;
    *size_out = first_size;
    return components;
}

}  // namespace detail

/// Outer boundary of the single foreground component as a closed CCW polyline
/// of pixel centers. Holes are ignored.
inline Contour extract_contour(const BinaryMask& mask) {
    int sx = 0, sy = 0;
    size_t comp_size = 0;
    int ncomp = detail::count_components_4(mask, &sx, &sy, &comp_size);
    if (ncomp == 0) throw EmptyMask("mask has no foreground pixels");
    if (ncomp > 1) throw MultipleComponents("mask has more than one foreground component");
    if (comp_size < 9) throw EmptyMask("foreground component below minimum size (9 px)");

    // Moore neighborhood in clockwise order starting west (y grows downward).
    static const std::array<std::pair<int, int>, 8> kOffsets = {{
        {-1, 0}, {-1, -1}, {0, -1}, {1, -1}, {1, 0}, {1, 1}, {0, 1}, {-1, 1},
    }};
    auto offset_index = [&](int dx, int dy) {
        for (int i = 0; i < 8; ++i)
            if (kOffsets[i].first == dx && kOffsets[i].second == dy) return i;
        return 0;
    };

    std::vector<Vec2> boundary;
    int cx = sx, cy = sy;
    // The row-major scan guarantees the west neighbor of the start pixel is
    // background, so the virtual entry direction is "from the west".
    int backtrack = offset_index(-1, 0);
    int first_dir = -1;
    const size_t guard_limit = mask.data.size() * 4 + 16;

    boundary.push_back({double(sx), double(sy)});
    while (true) {
        int found = -1;
        int probe = backtrack;
        for (int step = 0; step < 8; ++step) {
            probe = (probe + 1) % 8;
            int nx = cx + kOffsets[probe].first;
            int ny = cy + kOffsets[probe].second;
            if (mask.fg(nx, ny)) {
                found = probe;
                break;
            }
        }
        if (found < 0) break;  // isolated pixel, cannot happen for size >= 9
        if (cx == sx && cy == sy) {
            // Jacob's stopping criterion: stop when the trace is about to
            // leave the start pixel in the same direction it first did.
            if (first_dir < 0)
                first_dir = found;
            else if (found == first_dir)
                break;
        }
        int px = cx, py = cy;
        cx += kOffsets[found].first;
        cy += kOffsets[found].second;
        backtrack = offset_index(px - cx, py - cy);
        boundary.push_back({double(cx), double(cy)});
        if (boundary.size() > guard_limit)
            throw Error("boundary trace failed to terminate");
    }

    // Drop consecutive duplicates, normalize orientation to CCW.
    std::vector<Vec2> pts;
    pts.reserve(boundary.size());
    for (const Vec2& p : boundary) {
        if (pts.empty() || (pts.back() - p).squared_norm() > 0) pts.push_back(p);
    }
    while (pts.size() > 1 && (pts.front() - pts.back()).squared_norm() == 0) pts.pop_back();
    if (pts.size() < 3) throw EmptyMask("component too thin to form a contour");

    Contour c;
    c.points = std::move(pts);
    if (polygon_signed_area(c.points) < 0)
        std::reverse(c.points.begin() + 1, c.points.end());
    return c;
}

// ---------------------------------------------------------------------------
// Curvature and edge angles
// ---------------------------------------------------------------------------

/// Unsigned curvature from an algebraic (Kasa) circle fit over +-window
/// neighbors. Collinear windows return 0.
inline double curvature_at(const Contour& contour, int index, int window = 4) {
    if (contour.points.size() < 3) throw EmptyContour("contour has fewer than 3 points");
    if (window < 1) throw Error("curvature window must be >= 1");
    const auto& pts = contour.points;
    const int n = int(pts.size());
    window = std::min(window, (n - 1) / 2);
    if (window < 1) window = 1;

    // Center coordinates for conditioning.
    Vec2 mean{0, 0};
    const int m = 2 * window + 1;
    for (int d = -window; d <= window; ++d) mean += pts[size_t(((index + d) % n + n) % n)];
    mean = mean / double(m);

    double sxx = 0, sxy = 0, syy = 0, sxz = 0, syz = 0, sz = 0;
    for (int d = -window; d <= window; ++d) {
        Vec2 p = pts[size_t(((index + d) % n + n) % n)] - mean;
        double z = p.x * p.x + p.y * p.y;
        sxx += p.x * p.x;
        sxy += p.x * p.y;
        syy += p.y * p.y;
        sxz += p.x * z;
        syz += p.y * z;
        sz += z;
    }
    // Centered Kasa system: [sxx sxy; sxy syy] [D E]^T = -[sxz syz]^T, F = -sz/m.
    double det = sxx * syy - sxy * sxy;
    double scale = sxx + syy;
    if (det <= 1e-12 * scale * scale) return 0.0;  // collinear window
    double D = (-sxz * syy + syz * sxy) / det;
    double E = (-syz * sxx + sxz * sxy) / det;
    double F = -sz / m;
    double r2 = 0.25 * (D * D + E * E) - F;
    if (r2 <= 1e-18) return 0.0;
    return 1.0 / std::sqrt(r2);
}

/// Tangent direction from central differences, degrees in [0, 360).
inline double edge_angle_at(const Contour& contour, int index) {
    if (contour.points.size() < 3) throw EmptyContour("contour has fewer than 3 points");
    const auto& pts = contour.points;
    const int n = int(pts.size());
    const Vec2& prev = pts[size_t(((index - 1) % n + n) % n)];
    const Vec2& next = pts[size_t(((index + 1) % n + n) % n)];
    Vec2 t = next - prev;
    return wrap_angle_deg(rad_to_deg(std::atan2(t.y, t.x)));
}

// ---------------------------------------------------------------------------
// Farthest point sampling
// ---------------------------------------------------------------------------

/// Greedy max-min selection; ties broken by lowest index; result sorted
/// ascending.
inline std::vector<int> farthest_point_sampling(const std::vector<Vec2>& points, int k,
                                                int seed_index = 0) {
    const int n = int(points.size());
    if (k < 1 || k > n) throw KTooLarge("k must satisfy 1 <= k <= |points|");
    if (seed_index < 0 || seed_index >= n) throw Error("seed index out of range");

    std::vector<int> selected{seed_index};
    std::vector<double> dist(n);
    for (int i = 0; i < n; ++i) dist[i] = (points[i] - points[seed_index]).squared_norm();
    while (int(selected.size()) < k) {
        int best = -1;
        double best_d = -1.0;
        for (int i = 0; i < n; ++i) {
            if (dist[i] > best_d) {
                best_d = dist[i];
                best = i;
            }
        }
        selected.push_back(best);
        for (int i = 0; i < n; ++i)
            dist[i] = std::min(dist[i], (points[i] - points[best]).squared_norm());
    }
    std::sort(selected.begin(), selected.end());
    return selected;
}

// ---------------------------------------------------------------------------
// Harris keypoints
// ---------------------------------------------------------------------------

namespace detail {

inline GrayImage gaussian_blur(const GrayImage& src, double sigma) {
    int radius = std::max(1, int(std::ceil(3.0 * sigma)));
    std::vector<double> kernel(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        kernel[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += kernel[i + radius];
    }
    for (double& k : kernel) k /= sum;

    GrayImage tmp(src.width, src.height), dst(src.width, src.height);
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * src.at_clamped(x + i, y);
            tmp.at(x, y) = acc;
        }
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += kernel[i + radius] * tmp.at_clamped(x, y + i);
            dst.at(x, y) = acc;
        }
    return dst;
}

/// Harris corner response with Sobel gradients, Gaussian window, k = 0.04.
inline GrayImage harris_response(const GrayImage& img, double sigma = 1.0, double k = 0.04) {
    GrayImage ix(img.width, img.height), iy(img.width, img.height);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            double p00 = img.at_clamped(x - 1, y - 1), p10 = img.at_clamped(x, y - 1),
                   p20 = img.at_clamped(x + 1, y - 1);
            double p01 = img.at_clamped(x - 1, y), p21 = img.at_clamped(x + 1, y);
            double p02 = img.at_clamped(x - 1, y + 1), p12 = img.at_clamped(x, y + 1),
                   p22 = img.at_clamped(x + 1, y + 1);
            ix.at(x, y) = (p20 + 2 * p21 + p22 - p00 - 2 * p01 - p02) / 8.0;
            iy.at(x, y) = (p02 + 2 * p12 + p22 - p00 - 2 * p10 - p20) / 8.0;
        }
    }
    GrayImage ixx(img.width, img.height), iyy(img.width, img.height), ixy(img.width, img.height);
    for (size_t i = 0; i < img.data.size(); ++i) {
        ixx.data[i] = ix.data[i] * ix.data[i];
        iyy.data[i] = iy.data[i] * iy.data[i];
        ixy.data[i] = ix.data[i] * iy.data[i];
    }
    ixx = gaussian_blur(ixx, sigma);
    iyy = gaussian_blur(iyy, sigma);
    ixy = gaussian_blur(ixy, sigma);
    GrayImage resp(img.width, img.height);
    for (size_t i = 0; i < img.data.size(); ++i) {
        double det = ixx.data[i] * iyy.data[i] - ixy.data[i] * ixy.data[i];
        double tr = ixx.data[i] + iyy.data[i];
        resp.data[i] = det - k * tr * tr;
    }
    return resp;
}

}  // namespace detail

/// Harris corners snapped onto the contour, in contour order. If fewer than
/// min_count maxima survive the relative threshold, the set is topped up by
/// uniform arc-length resampling of the contour.
inline std::vector<Keypoint> harris_keypoints(const GrayImage& image, const Contour& contour,
                                              int min_count, int curvature_window = 4) {
    if (contour.points.size() < 3) throw EmptyContour("contour has fewer than 3 points");
    if (min_count < 3) throw Error("min_count must be >= 3");

    GrayImage resp = detail::harris_response(image);
    double rmax = 0.0;
    for (double v : resp.data) rmax = std::max(rmax, v);

    struct Candidate {
        int x, y;
        double r;
    };
    std::vector<Candidate> candidates;
    if (rmax > 0.0) {
        const double threshold = 0.01 * rmax;
        for (int y = 0; y < resp.height; ++y)
            for (int x = 0; x < resp.width; ++x)
                if (resp.at(x, y) >= threshold) candidates.push_back({x, y, resp.at(x, y)});
    }
    std::sort(candidates.begin(), candidates.end(), [](const Candidate& a, const Candidate& b) {
        if (a.r != b.r) return a.r > b.r;
        if (a.y != b.y) return a.y < b.y;
        return a.x < b.x;
    });

    // Greedy non-max suppression with a 3 px radius, then keep maxima within
    // 2 px of the contour polyline.
    const double nms_radius2 = 3.0 * 3.0;
    std::vector<Vec2> accepted;
    std::vector<int> snapped_indices;
    auto nearest_vertex = [&](const Vec2& p) {
        int best = 0;
        double best_d = std::numeric_limits<double>::max();
        for (size_t i = 0; i < contour.points.size(); ++i) {
            double d = (contour.points[i] - p).squared_norm();
            if (d < best_d) {
                best_d = d;
                best = int(i);
            }
        }
        return best;
    };
    for (const Candidate& c : candidates) {
        Vec2 p{double(c.x), double(c.y)};
        bool suppressed = false;
        for (const Vec2& a : accepted)
            if ((a - p).squared_norm() <= nms_radius2) {
                suppressed = true;
                break;
            }
        if (suppressed) continue;
        accepted.push_back(p);
        if (point_polyline_distance(p, contour.points) <= 2.0) {
            int idx = nearest_vertex(p);
            if (std::find(snapped_indices.begin(), snapped_indices.end(), idx) ==
                snapped_indices.end())
                snapped_indices.push_back(idx);
        }
    }

    auto table = arclength_table(contour.points);
    struct Entry {
        double arc_pos;
        Keypoint kp;
    };
    std::vector<Entry> entries;
    for (int idx : snapped_indices) {
        Keypoint kp{contour.points[size_t(idx)], curvature_at(contour, idx, curvature_window),
                    edge_angle_at(contour, idx), idx};
        entries.push_back({table[size_t(idx)], kp});
    }

    int deficit = min_count - int(entries.size());
    if (deficit > 0) {
        double total = table.back();
        for (int pass = 0; pass < 8 && deficit > 0; ++pass) {
            int added = 0;
            for (int j = 0; j < deficit; ++j) {
                double s = std::fmod((j + 0.5 + 0.13 * pass) * total / deficit, total);
                int nv = 0;
                Vec2 p = point_at_arclength(contour.points, table, s, &nv);
                bool collides = false;
                for (const Entry& e : entries)
                    if ((e.kp.position - p).squared_norm() < 0.75 * 0.75) {
                        collides = true;
                        break;
                    }
                if (collides) continue;
                Keypoint kp{p, curvature_at(contour, nv, curvature_window),
                            edge_angle_at(contour, nv), nv};
                entries.push_back({s, kp});
                ++added;
            }
            deficit = min_count - int(entries.size());
            if (added == 0 && deficit > 0) continue;
        }
    }

    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.arc_pos < b.arc_pos; });
    std::vector<Keypoint> out;
    out.reserve(entries.size());
    for (const Entry& e : entries) out.push_back(e.kp);
    return out;
}

// ---------------------------------------------------------------------------
// Polygon intersection
// ---------------------------------------------------------------------------

namespace detail {

/// Sorted x-intervals where the horizontal line at y crosses the polygon
/// interior (even-odd rule).
inline void scanline_intervals(const Polygon& poly, double y, std::vector<double>& xs) {
    xs.clear();
    const size_t n = poly.size();
    for (size_t i = 0; i < n; ++i) {
        const Vec2& p = poly[i];
        const Vec2& q = poly[(i + 1) % n];
        if ((p.y <= y && q.y > y) || (q.y <= y && p.y > y))
            xs.push_back(p.x + (y - p.y) * (q.x - p.x) / (q.y - p.y));
    }
    std::sort(xs.begin(), xs.end());
}

inline double intervals_overlap_length(const std::vector<double>& a, const std::vector<double>& b) {
    double len = 0.0;
    size_t i = 0, j = 0;
    while (i + 1 < a.size() && j + 1 < b.size()) {
        double lo = std::max(a[i], b[j]);
        double hi = std::min(a[i + 1], b[j + 1]);
        if (hi > lo) len += hi - lo;
        if (a[i + 1] < b[j + 1])
            i += 2;
        else
            j += 2;
    }
    return len;
}

}  // namespace detail

/// Intersection area by midpoint scanline rasterization: exact in x per row,
/// midpoint rule across rows. Handles concave polygons.
inline double polygon_intersection_area(const Polygon& a, const Polygon& b, double resolution) {
    if (a.size() < 3 || b.size() < 3) throw DegeneratePolygon("polygons need >= 3 points");
    if (resolution <= 0) throw Error("resolution must be positive");
    if (polygon_area(a) <= 0 || polygon_area(b) <= 0)
        throw DegeneratePolygon("polygon has zero area");

    BoundingBox ba = polygon_bbox(a), bb = polygon_bbox(b);
    double ylo = std::max(ba.lo.y, bb.lo.y);
    double yhi = std::min(ba.hi.y, bb.hi.y);
    if (yhi <= ylo) return 0.0;
    if (std::max(ba.lo.x, bb.lo.x) >= std::min(ba.hi.x, bb.hi.x)) return 0.0;

    const double dy = 1.0 / resolution;
    const int rows = std::max(1, int(std::ceil((yhi - ylo) * resolution)));
    std::vector<double> xa, xb;
    double area = 0.0;
    for (int r = 0; r < rows; ++r) {
        double y = ylo + (r + 0.5) * (yhi - ylo) / rows;
        detail::scanline_intervals(a, y, xa);
        if (xa.empty()) continue;
        detail::scanline_intervals(b, y, xb);
        if (xb.empty()) continue;
        area += detail::intervals_overlap_length(xa, xb) * (yhi - ylo) / rows;
    }
    (void)dy;
    return area;
}

/// Sutherland-Hodgman clipping of an arbitrary subject polygon against a
/// convex clip polygon. Exact path used to cross-check the raster backend.
inline Polygon clip_polygon_convex(const Polygon& subject, const Polygon& clip) {
    if (subject.size() < 3 || clip.size() < 3)
        throw DegeneratePolygon("polygons need >= 3 points");
    Polygon clip_ccw = clip;
    if (polygon_signed_area(clip_ccw) < 0) std::reverse(clip_ccw.begin(), clip_ccw.end());

    Polygon output = subject;
    for (size_t i = 0, n = clip_ccw.size(); i < n && !output.empty(); ++i) {
        const Vec2& ca = clip_ccw[i];
        const Vec2& cb = clip_ccw[(i + 1) % n];
        Vec2 edge = cb - ca;
        auto inside = [&](const Vec2& p) { return edge.cross(p - ca) >= 0.0; };
        auto intersect = [&](const Vec2& p, const Vec2& q) {
            Vec2 d = q - p;
            double denom = edge.cross(d);
            double t = denom != 0 ? edge.cross(ca - p) / denom : 0.0;
            return p + d * t;
        };
        Polygon input = std::move(output);
        output.clear();
        for (size_t j = 0; j < input.size(); ++j) {
            const Vec2& cur = input[j];
            const Vec2& prev = input[(j + input.size() - 1) % input.size()];
            bool cur_in = inside(cur), prev_in = inside(prev);
            if (cur_in) {
                if (!prev_in) output.push_back(intersect(prev, cur));
                output.push_back(cur);
            } else if (prev_in) {
                output.push_back(intersect(prev, cur));
            }
        }
    }
    return output;
}

/// Exact intersection area for a convex clip region; companion to the raster
/// backend.
inline double polygon_intersection_area_convex(const Polygon& subject, const Polygon& convex_clip) {
    Polygon clipped = clip_polygon_convex(subject, convex_clip);
    if (clipped.size() < 3) return 0.0;
    return polygon_area(clipped);
}

/// Even-odd point-in-polygon test.
inline bool point_in_polygon(const Vec2& p, const Polygon& poly) {
    bool in = false;
    for (size_t i = 0, n = poly.size(); i < n; ++i) {
        const Vec2& a = poly[i];
        const Vec2& b = poly[(i + 1) % n];
        if ((a.y <= p.y && b.y > p.y) || (b.y <= p.y && a.y > p.y)) {
            double x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if (x > p.x) in = !in;
        }
    }
    return in;
}

}  // namespace reassemble::geometry
