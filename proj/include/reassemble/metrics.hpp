#pragma once

#include <string>
#include <vector>

#include "reassemble/diffusion.hpp"
#include "reassemble/geometry.hpp"

namespace reassemble::metrics {

using diffusion::AggregatedPose;
using geometry::Polygon;
using geometry::RigidTransform2D;
using geometry::Vec2;

class PieceSetMismatch : public Error {
public:
    using Error::Error;
};
class DegeneratePiece : public Error {
public:
    using Error::Error;
};

struct PiecePose {
    std::string id;
    AggregatedPose pose;
};

struct Solution {
    std::vector<PiecePose> poses;

    const AggregatedPose* find(const std::string& id) const {
        for (const auto& p : poses)
            if (p.id == id) return &p.pose;
        return nullptr;
    }
};

/// Everything the metrics need to know about one ground-truth piece: its
/// contour in the local (mm) frame and its true pose.
struct EvalPiece {
    std::string id;
    Polygon contour_mm;
    RigidTransform2D gt_pose;
};

using EvalPuzzle = std::vector<EvalPiece>;

enum class AreaBackend { Raster, ConvexClip };

struct MetricReport {
    double q_pos = 0.0;
    double rmse_translation_mm = 0.0;        // as printed: sqrt of mean unsquared norm
    double rmse_rotation_deg = 0.0;          // as printed: sqrt of mean folded angle
    double rmse_translation_mm_conventional = 0.0;  // sqrt of mean squared norm
    double rmse_rotation_deg_conventional = 0.0;    // sqrt of mean squared angle
    std::vector<double> per_piece_overlap;
    std::vector<double> weights;
};

namespace detail {

inline RigidTransform2D pose_to_transform(const AggregatedPose& p) {
    return {p.translation, p.rotation};
}

inline void require_matching(const Solution& sol, const EvalPuzzle& gt) {
    if (sol.poses.size() != gt.size())
        throw PieceSetMismatch("solution and ground truth piece counts differ");
    for (const auto& piece : gt)
        if (!sol.find(piece.id))
            throw PieceSetMismatch("solution missing piece " + piece.id);
}

/// Folded absolute angle between two unit rotation vectors, degrees in
/// [0, 180].
inline double rotation_difference_deg(const Vec2& a, const Vec2& b) {
    double dot = a.x * b.x + a.y * b.y;
    double cross = a.x * b.y - a.y * b.x;
    return std::abs(rad_to_deg(std::atan2(cross, dot)));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// RMSE, implemented exactly as printed (sqrt of the mean of unsquared norms),
// with the conventional squared-norm variant reported beside it.
// ---------------------------------------------------------------------------

inline double rmse_translation(const Solution& sol, const EvalPuzzle& gt) {
    detail::require_matching(sol, gt);
    double sum = 0.0;
    for (const auto& piece : gt) {
        const AggregatedPose* p = sol.find(piece.id);
        sum += (p->translation - piece.gt_pose.translation).norm();
    }
    return std::sqrt(sum / double(gt.size()));
}

inline double rmse_translation_conventional(const Solution& sol, const EvalPuzzle& gt) {
    detail::require_matching(sol, gt);
    double sum = 0.0;
    for (const auto& piece : gt) {
        const AggregatedPose* p = sol.find(piece.id);
        sum += (p->translation - piece.gt_pose.translation).squared_norm();
    }
    return std::sqrt(sum / double(gt.size()));
}

inline double rmse_rotation(const Solution& sol, const EvalPuzzle& gt) {
    detail::require_matching(sol, gt);
    double sum = 0.0;
    for (const auto& piece : gt) {
        const AggregatedPose* p = sol.find(piece.id);
        sum += detail::rotation_difference_deg(p->rotation, piece.gt_pose.rotation);
    }
    return std::sqrt(sum / double(gt.size()));
}

inline double rmse_rotation_conventional(const Solution& sol, const EvalPuzzle& gt) {
    detail::require_matching(sol, gt);
    double sum = 0.0;
    for (const auto& piece : gt) {
        const AggregatedPose* p = sol.find(piece.id);
        double d = detail::rotation_difference_deg(p->rotation, piece.gt_pose.rotation);
        sum += d * d;
    }
    return std::sqrt(sum / double(gt.size()));
}

// ---------------------------------------------------------------------------
// Anchor alignment
// ---------------------------------------------------------------------------

/// Rigidly maps the whole solution so the largest-area piece (ties: lowest
/// id) coincides with its ground-truth pose.
inline Solution anchor_align(const Solution& sol, const EvalPuzzle& gt) {
    detail::require_matching(sol, gt);
    if (gt.empty()) return sol;

    const EvalPiece* anchor = nullptr;
    double best_area = -1.0;
    for (const auto& piece : gt) {
        double area = geometry::polygon_area(piece.contour_mm);
        if (area > best_area || (area == best_area && anchor && piece.id < anchor->id)) {
            best_area = area;
            anchor = &piece;
        }
    }

    RigidTransform2D pred = detail::pose_to_transform(*sol.find(anchor->id)).normalized();
    RigidTransform2D correction = anchor->gt_pose.compose(pred.inverse());

    Solution out;
    for (const auto& entry : sol.poses) {
        RigidTransform2D moved =
            correction.compose(detail::pose_to_transform(entry.pose).normalized());
        AggregatedPose pose;
        pose.translation = moved.translation;
        pose.rotation = moved.rotation;
        pose.degenerate = entry.pose.degenerate;
        out.poses.push_back({entry.id, pose});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Q_pos
// ---------------------------------------------------------------------------

inline double piece_intersection_area(const Polygon& a, const Polygon& b, double resolution,
                                      AreaBackend backend) {
    if (backend == AreaBackend::ConvexClip) return geometry::polygon_intersection_area_convex(a, b);
    return geometry::polygon_intersection_area(a, b, resolution);
}

/// Area-weighted overlap between ground-truth-posed and predicted-posed
/// contours, after anchor alignment.
inline MetricReport q_pos(const Solution& sol, const EvalPuzzle& gt, double resolution = 4.0,
                          AreaBackend backend = AreaBackend::Raster) {
    detail::require_matching(sol, gt);
    Solution aligned = anchor_align(sol, gt);

    MetricReport report;
    double total_area = 0.0;
    std::vector<double> areas;
    for (const auto& piece : gt) {
        if (piece.contour_mm.size() < 3) throw DegeneratePiece("piece contour has < 3 points");
        double area = geometry::polygon_area(piece.contour_mm);
        if (area <= 0) throw DegeneratePiece("piece contour has zero area");
        areas.push_back(area);
        total_area += area;
    }

    double q = 0.0;
    for (size_t i = 0; i < gt.size(); ++i) {
        const EvalPiece& piece = gt[i];
        Polygon gt_poly = geometry::apply_transform(piece.contour_mm, piece.gt_pose);
        RigidTransform2D pred = detail::pose_to_transform(*aligned.find(piece.id)).normalized();
        Polygon pred_poly = geometry::apply_transform(piece.contour_mm, pred);

        geometry::BoundingBox ba = geometry::polygon_bbox(gt_poly);
        geometry::BoundingBox bb = geometry::polygon_bbox(pred_poly);
        double inter = 0.0;
        bool overlaps = ba.lo.x < bb.hi.x && bb.lo.x < ba.hi.x && ba.lo.y < bb.hi.y &&
                        bb.lo.y < ba.hi.y;
        if (overlaps) inter = piece_intersection_area(gt_poly, pred_poly, resolution, backend);

        double ratio = std::clamp(inter / areas[i], 0.0, 1.0);
        double weight = areas[i] / total_area;
        report.per_piece_overlap.push_back(ratio);
        report.weights.push_back(weight);
        q += weight * ratio;
    }
    report.q_pos = std::clamp(q, 0.0, 1.0);
    report.rmse_translation_mm = rmse_translation(aligned, gt);
    report.rmse_rotation_deg = rmse_rotation(aligned, gt);
    report.rmse_translation_mm_conventional = rmse_translation_conventional(aligned, gt);
    report.rmse_rotation_deg_conventional = rmse_rotation_conventional(aligned, gt);
    return report;
}

/// Full report: anchor alignment once, then all three metrics on the aligned
/// solution.
inline MetricReport compute_metrics(const Solution& sol, const EvalPuzzle& gt,
                                    double resolution = 4.0,
                                    AreaBackend backend = AreaBackend::Raster) {
    return q_pos(sol, gt, resolution, backend);
}

}  // namespace reassemble::metrics
