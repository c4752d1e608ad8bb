#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "splatgraph/dataset.hpp"

namespace splatgraph {

inline constexpr double kMatchIouThreshold = 0.3;

// Axis-aligned hull of the oriented box's corners in pixel space, clipped to
// the image. Corners behind the near plane are dropped; no usable corner or an
// empty clipped hull yields nothing.
inline std::optional<BoundingBox2d> project_box(const Camera& cam,
                                                const QuatPose& pose,
                                                const Vec3& dims) {
  Mat3 r = quat_to_mat(quat_normalize(pose.q));
  Vec3 half = 0.5 * dims;
  double x0 = std::numeric_limits<double>::infinity(), y0 = x0;
  double x1 = -x0, y1 = -x0;
  int usable = 0;
  for (int i = 0; i < 8; ++i) {
    Vec3 corner(i & 1 ? half.x() : -half.x(), i & 2 ? half.y() : -half.y(),
                i & 4 ? half.z() : -half.z());
    Vec3 p_cam = cam.cam_from_world.apply(r * corner + pose.t);
    if (p_cam.z() < cam.near_clip) continue;
    double px = cam.fx * p_cam.x() / p_cam.z() + cam.cx;
    double py = cam.fy * p_cam.y() / p_cam.z() + cam.cy;
    x0 = std::min(x0, px);
    y0 = std::min(y0, py);
    x1 = std::max(x1, px);
    y1 = std::max(y1, py);
    ++usable;
  }
  if (usable == 0) return std::nullopt;
  BoundingBox2d box{std::max(x0, 0.0), std::max(y0, 0.0),
                    std::min(x1, static_cast<double>(cam.width)),
                    std::min(y1, static_cast<double>(cam.height))};
  if (box.x1 <= box.x0 || box.y1 <= box.y0) return std::nullopt;
  return box;
}

inline double iou2d(const BoundingBox2d& a, const BoundingBox2d& b) {
  double ax = std::max(0.0, a.x1 - a.x0), ay = std::max(0.0, a.y1 - a.y0);
  double bx = std::max(0.0, b.x1 - b.x0), by = std::max(0.0, b.y1 - b.y0);
  double ix = std::max(0.0, std::min(a.x1, b.x1) - std::max(a.x0, b.x0));
  double iy = std::max(0.0, std::min(a.y1, b.y1) - std::max(a.y0, b.y0));
  double inter = ix * iy;
  double uni = ax * ay + bx * by - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Minimum-cost assignment (potential-based Hungarian algorithm, O(n^2 m)).
// Returns col index per row, -1 where fewer columns than rows exist.
inline std::vector<int> hungarian_min_cost(
    const std::vector<std::vector<double>>& cost) {
  int n = static_cast<int>(cost.size());
  if (n == 0) return {};
  int m = static_cast<int>(cost[0].size());
  for (const auto& row : cost)
    if (static_cast<int>(row.size()) != m)
      throw std::invalid_argument("hungarian: ragged cost matrix");
  if (m == 0) return std::vector<int>(n, -1);
  if (n > m) {
    // Transpose so every row of the smaller side gets assigned.
    std::vector<std::vector<double>> t(m, std::vector<double>(n));
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j) t[j][i] = cost[i][j];
    std::vector<int> col_to_row = hungarian_min_cost(t);
    std::vector<int> row_to_col(n, -1);
    for (int j = 0; j < m; ++j)
      if (col_to_row[j] >= 0) row_to_col[col_to_row[j]] = j;
    return row_to_col;
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[j0] = 1;
      int i0 = p[j0], j1 = -1;
      double delta = inf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0);
  }
  std::vector<int> row_to_col(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
  return row_to_col;
}

struct TrackMatch {
  int cam_id = -1;
  int local_id = -1;
  int tracklet_id = -1;
  double mean_iou = 0.0;
};

// Associates per-camera 2D tracks with 3D tracklets. Score is the mean IoU of
// the detected box against the projected box over frames where both exist;
// assignment maximizes total score per camera, then pairs under `tau` drop.
inline std::vector<TrackMatch> match_tracklets(
    const std::vector<Track2d>& tracks, const std::vector<Tracklet3d>& tracklets,
    const std::vector<DatasetCamera>& cameras, double tau = kMatchIouThreshold) {
  std::vector<TrackMatch> out;
  for (const DatasetCamera& cam : cameras) {
    std::vector<int> rows;  // indices into tracks for this camera
    for (std::size_t i = 0; i < tracks.size(); ++i)
      if (tracks[i].cam_id == cam.intrinsics.id) rows.push_back(static_cast<int>(i));
    if (rows.empty() || tracklets.empty()) continue;

    int n_frames = static_cast<int>(cam.cam_from_world.size());
    std::vector<std::vector<double>> iou(
        rows.size(), std::vector<double>(tracklets.size(), 0.0));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Track2d& track = tracks[rows[r]];
      for (std::size_t c = 0; c < tracklets.size(); ++c) {
        const Tracklet3d& tk = tracklets[c];
        double sum = 0.0;
        int count = 0;
        for (int f = 0; f < n_frames; ++f) {
          if (!track.valid[f] || !tk.valid[f]) continue;
          Camera frame_cam = cam.intrinsics;
          frame_cam.cam_from_world = cam.cam_from_world[f];
          std::optional<BoundingBox2d> proj =
              project_box(frame_cam, tk.pose[f], tk.dims);
          if (!proj) continue;
          sum += iou2d(track.box[f], *proj);
          ++count;
        }
        iou[r][c] = count > 0 ? sum / count : 0.0;
      }
    }
    std::vector<std::vector<double>> cost(iou.size(),
                                          std::vector<double>(tracklets.size()));
    for (std::size_t r = 0; r < iou.size(); ++r)
      for (std::size_t c = 0; c < tracklets.size(); ++c) cost[r][c] = -iou[r][c];
    std::vector<int> assign = hungarian_min_cost(cost);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      int c = assign[r];
      if (c < 0 || iou[r][c] < tau) continue;
      out.push_back({cam.intrinsics.id, tracks[rows[r]].local_id,
                     tracklets[c].id, iou[r][c]});
    }
  }
  return out;
}

// Merges detected joint-rotation sequences from several cameras into one
// sequence for a tracklet. Each frame takes the sequence whose 2D box best
// overlaps the projected 3D box; equal scores fall to the lower camera index.
inline BodyPoseSequence fuse_multicam(
    const Tracklet3d& tracklet, const std::vector<const BodyPoseInit*>& poses,
    const std::vector<const Track2d*>& tracks,
    const std::vector<DatasetCamera>& cameras, int n_frames) {
  if (poses.size() != tracks.size())
    throw std::invalid_argument("fuse_multicam: candidate lists disagree");
  int n_joints = poses.empty() ? 0 : poses[0]->body.n_joints;
  for (const BodyPoseInit* p : poses)
    if (p->body.n_joints != n_joints)
      throw std::invalid_argument("fuse_multicam: joint count disagrees");
  BodyPoseSequence fused;
  fused.n_joints = n_joints;
  fused.theta.assign(n_frames, std::vector<Vec4>(n_joints, quat_identity()));
  fused.valid.assign(n_frames, 0);
  fused.provenance.assign(n_frames,
                          static_cast<std::uint8_t>(PoseProvenance::kDetected));
  auto camera_of = [&](int cam_id) -> const DatasetCamera& {
    for (const DatasetCamera& c : cameras)
      if (c.intrinsics.id == cam_id) return c;
    throw std::invalid_argument("fuse_multicam: unknown camera id");
  };
  for (int f = 0; f < n_frames; ++f) {
    if (f >= static_cast<int>(tracklet.valid.size()) || !tracklet.valid[f]) continue;
    int best = -1;
    double best_iou = -1.0;
    int best_cam = 0;
    for (std::size_t i = 0; i < poses.size(); ++i) {
      if (f >= static_cast<int>(poses[i]->body.n_frames()) ||
          !poses[i]->body.valid[f])
        continue;
      if (!tracks[i]->valid[f]) continue;
      const DatasetCamera& cam = camera_of(tracks[i]->cam_id);
      Camera frame_cam = cam.intrinsics;
      frame_cam.cam_from_world = cam.cam_from_world[f];
      std::optional<BoundingBox2d> proj =
          project_box(frame_cam, tracklet.pose[f], tracklet.dims);
      if (!proj) continue;
      double score = iou2d(tracks[i]->box[f], *proj);
      bool wins = score > best_iou ||
                  (score == best_iou && tracks[i]->cam_id < best_cam);
      if (best < 0 || wins) {
        best = static_cast<int>(i);
        best_iou = score;
        best_cam = tracks[i]->cam_id;
      }
    }
    if (best < 0) continue;
    fused.theta[f] = poses[best]->body.theta[f];
    fused.valid[f] = 1;
  }
  return fused;
}

// Fills missing frames in place: interior gaps interpolate each joint
// spherically between the bracketing detections, leading and trailing gaps
// hold the nearest detection. Joint 0 is replaced by `root_align` everywhere
// (the box pose carries the global orientation). Filled frames are tagged.
inline void complete_poses(BodyPoseSequence& body,
                           const Vec4& root_align = quat_identity()) {
  if (!body.any_valid())
    throw std::invalid_argument("complete_poses: nothing to interpolate from");
  int n = static_cast<int>(body.n_frames());
  std::vector<std::uint8_t> was_valid = body.valid;
  for (int f = 0; f < n; ++f) {
    if (was_valid[f]) continue;
    int prev = -1, next = -1;
    for (int g = f - 1; g >= 0; --g)
      if (was_valid[g]) {
        prev = g;
        break;
      }
    for (int g = f + 1; g < n; ++g)
      if (was_valid[g]) {
        next = g;
        break;
      }
    if (prev >= 0 && next >= 0) {
      double u = static_cast<double>(f - prev) / (next - prev);
      for (int k = 0; k < body.n_joints; ++k)
        body.theta[f][k] = quat_slerp(body.theta[prev][k], body.theta[next][k], u);
    } else {
      int src = prev >= 0 ? prev : next;
      body.theta[f] = body.theta[src];
    }
    body.valid[f] = 1;
    body.provenance[f] = static_cast<std::uint8_t>(PoseProvenance::kInterpolated);
  }
  for (int f = 0; f < n; ++f)
    if (body.n_joints > 0) body.theta[f][0] = root_align;
}

struct PosePipelineResult {
  std::vector<TrackMatch> matches;
  std::map<int, BodyPoseSequence> body;  // tracklet id -> completed sequence
  std::vector<int> demoted;  // articulated tracklets left without any pose data
};

// Full preprocessing pass: associate 2D tracks to 3D tracklets, fuse the
// attached joint-rotation detections across cameras, and complete the gaps.
// Articulated tracklets that end up with no detected frame at all are listed
// for demotion to deformable.
inline PosePipelineResult prepare_body_poses(const Dataset& ds) {
  PosePipelineResult result;
  result.matches = match_tracklets(ds.tracks2d, ds.tracklets, ds.cameras);
  for (const Tracklet3d& tk : ds.tracklets) {
    if (tk.kind != NodeKind::kArticulated) continue;
    std::vector<const BodyPoseInit*> poses;
    std::vector<const Track2d*> tracks;
    for (const TrackMatch& m : result.matches) {
      if (m.tracklet_id != tk.id) continue;
      for (const BodyPoseInit& p : ds.poses_init) {
        if (p.cam_id != m.cam_id || p.local_id != m.local_id) continue;
        for (const Track2d& tr : ds.tracks2d) {
          if (tr.cam_id == m.cam_id && tr.local_id == m.local_id) {
            poses.push_back(&p);
            tracks.push_back(&tr);
            break;
          }
        }
        break;
      }
    }
    BodyPoseSequence fused =
        fuse_multicam(tk, poses, tracks, ds.cameras, ds.n_frames);
    if (!fused.any_valid()) {
      result.demoted.push_back(tk.id);
      continue;
    }
    complete_poses(fused);
    result.body.emplace(tk.id, std::move(fused));
  }
  return result;
}

}  // namespace splatgraph
