#pragma once

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "splatgraph/articulated.hpp"
#include "splatgraph/image_io.hpp"
#include "splatgraph/scene_graph.hpp"
#include "splatgraph/sgbin.hpp"

namespace splatgraph {

inline NodeKind node_kind_from_name(const std::string& s) {
  if (s == "rigid") return NodeKind::kRigid;
  if (s == "articulated") return NodeKind::kArticulated;
  if (s == "deformable") return NodeKind::kDeformable;
  throw std::invalid_argument("unknown node kind: " + s);
}

struct DatasetCamera {
  Camera intrinsics;                 // cam_from_world field unused here
  std::vector<SE3> cam_from_world;   // one extrinsic per frame
};

// A 3D box track for one dynamic actor, world space, full extents in dims.
struct Tracklet3d {
  int id = -1;
  std::string class_label;
  NodeKind kind = NodeKind::kRigid;
  Vec3 dims = Vec3::Zero();
  std::vector<QuatPose> pose;        // world placement of the box center
  std::vector<std::uint8_t> valid;
};

struct BoundingBox2d {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

// Per-camera 2D track; local ids carry no cross-camera meaning.
struct Track2d {
  int cam_id = -1;
  int local_id = -1;
  std::vector<std::uint8_t> valid;
  std::vector<BoundingBox2d> box;
};

// Detected joint-rotation sequence riding a per-camera 2D track; which 3D
// actor it belongs to is resolved later by box association.
struct BodyPoseInit {
  int cam_id = -1;
  int local_id = -1;
  BodyPoseSequence body;
};

// Synthetic ground truth for the 2D->3D association, written alongside
// detections so the matching stage can be scored.
struct AssociationRecord {
  int cam_id = -1;
  int local_id = -1;
  int tracklet_id = -1;
};

// One lidar return projected into a camera: pixel plus ray range in meters.
struct DepthSample {
  double u = 0, v = 0, range = 0;
};

// Held-out frame rule: every 10th frame is reserved for view synthesis.
inline std::vector<int> nvs_split(int n_frames) {
  if (n_frames < 10)
    throw std::invalid_argument("nvs_split: need at least 10 frames");
  std::vector<int> test;
  for (int f = 0; f < n_frames; f += 10) test.push_back(f);
  return test;
}

struct Dataset {
  std::string root;
  std::string name;
  int n_frames = 0;
  double budget_scale = 1.0;
  std::vector<double> timestamps;
  std::vector<DatasetCamera> cameras;
  std::vector<Tracklet3d> tracklets;
  std::vector<Track2d> tracks2d;
  std::vector<BodyPoseInit> poses_init;
  ArticulatedTemplate human_template;
  bool has_template = false;
  std::string template_name = "biped";
  std::vector<int> test_frames;

  bool is_test_frame(int frame) const {
    for (int f : test_frames)
      if (f == frame) return true;
    return false;
  }

  // Intrinsics plus the frame's extrinsic as one renderable camera.
  Camera camera_at(int cam, int frame) const {
    const DatasetCamera& c = cameras.at(cam);
    Camera out = c.intrinsics;
    out.cam_from_world = c.cam_from_world.at(frame);
    return out;
  }

  std::string image_path(int cam, int frame) const {
    return root + "/images/" + frame_file(cam, frame, "png");
  }
  std::string sky_path(int cam, int frame) const {
    return root + "/sky/" + frame_file(cam, frame, "png");
  }
  std::string depth_path(int cam, int frame) const {
    return root + "/depth/" + frame_file(cam, frame, "bin");
  }
  std::string lidar_path(int frame) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%06d.bin", frame);
    return root + "/lidar/" + buf;
  }
  std::string template_path() const {
    return root + "/template/" + template_name + ".json";
  }

  std::vector<double> load_image(int cam, int frame) const {
    int w = 0, h = 0;
    std::vector<double> img = read_rgb16(image_path(cam, frame), &w, &h);
    check_size(cam, w, h, "image");
    return img;
  }

  std::vector<double> load_sky_mask(int cam, int frame) const {
    int w = 0, h = 0;
    std::vector<double> m = read_gray8(sky_path(cam, frame), &w, &h);
    check_size(cam, w, h, "sky mask");
    return m;
  }

  // Sparse ray ranges, one record per lidar return visible in this camera.
  std::vector<DepthSample> load_depth(int cam, int frame) const {
    SgbinFile f = SgbinFile::load(depth_path(cam, frame));
    std::vector<double> u = f.f64("u"), v = f.f64("v"), r = f.f64("range");
    if (u.size() != v.size() || u.size() != r.size())
      throw std::runtime_error("dataset: ragged depth arrays in " +
                               depth_path(cam, frame));
    const Camera& c = cameras.at(cam).intrinsics;
    std::vector<DepthSample> out(u.size());
    for (std::size_t i = 0; i < u.size(); ++i) {
      if (!(u[i] >= 0 && u[i] < c.width && v[i] >= 0 && v[i] < c.height))
        throw std::runtime_error("dataset: depth sample outside image in " +
                                 depth_path(cam, frame));
      if (!(r[i] > 0) || !std::isfinite(r[i]))
        throw std::runtime_error("dataset: nonpositive depth range in " +
                                 depth_path(cam, frame));
      out[i] = {u[i], v[i], r[i]};
    }
    return out;
  }

  std::vector<Vec3> load_lidar(int frame) const {
    SgbinFile f = SgbinFile::load(lidar_path(frame));
    std::vector<double> flat = f.f64("points");
    if (flat.size() % 3 != 0)
      throw std::runtime_error("dataset: lidar payload not a point list");
    std::vector<Vec3> pts(flat.size() / 3);
    for (std::size_t i = 0; i < pts.size(); ++i)
      pts[i] = Vec3(flat[i * 3], flat[i * 3 + 1], flat[i * 3 + 2]);
    return pts;
  }

 private:
  // Directories are keyed by camera id, not vector position.
  std::string frame_file(int cam, int frame, const char* ext) const {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "cam%d/%06d.%s",
                  cameras.at(cam).intrinsics.id, frame, ext);
    return buf;
  }

  void check_size(int cam, int w, int h, const char* what) const {
    const Camera& c = cameras.at(cam).intrinsics;
    if (w != c.width || h != c.height)
      throw std::runtime_error(std::string("dataset: ") + what + " size mismatch");
  }
};

namespace dataset_detail {

using nlohmann::json;

inline json quat_json(const Vec4& q) { return json::array({q[0], q[1], q[2], q[3]}); }
inline json vec3_json(const Vec3& v) { return json::array({v[0], v[1], v[2]}); }

inline Vec4 quat_from(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("expected quaternion");
  return Vec4(j[0], j[1], j[2], j[3]);
}

inline Vec3 vec3_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw std::runtime_error("expected 3-vector");
  return Vec3(j[0], j[1], j[2]);
}

inline json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw std::runtime_error("bad json in " + path + ": " + e.what());
  }
  return j;
}

inline void save_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path);
  out << j.dump(1) << "\n";
  if (!out) throw std::runtime_error("write failed: " + path);
}

inline json tracklets_json(const std::vector<Tracklet3d>& tracklets) {
  json arr = json::array();
  for (const Tracklet3d& t : tracklets) {
    json frames = json::array();
    for (std::size_t f = 0; f < t.pose.size(); ++f)
      frames.push_back({{"valid", t.valid[f] != 0},
                        {"q", quat_json(t.pose[f].q)},
                        {"t", vec3_json(t.pose[f].t)}});
    arr.push_back({{"id", t.id},
                   {"class", t.class_label},
                   {"kind", node_kind_name(t.kind)},
                   {"dims", vec3_json(t.dims)},
                   {"frames", frames}});
  }
  return arr;
}

inline std::vector<Tracklet3d> tracklets_from_json(const json& arr, int n_frames) {
  std::vector<Tracklet3d> out;
  for (const json& j : arr) {
    Tracklet3d t;
    t.id = j.at("id");
    t.class_label = j.at("class");
    t.kind = node_kind_from_name(j.at("kind"));
    t.dims = vec3_from(j.at("dims"));
    const json& frames = j.at("frames");
    if (static_cast<int>(frames.size()) != n_frames)
      throw std::runtime_error("tracklet frame count mismatch");
    for (const json& f : frames) {
      t.valid.push_back(f.at("valid").get<bool>() ? 1 : 0);
      t.pose.push_back({quat_from(f.at("q")), vec3_from(f.at("t"))});
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace dataset_detail

// Writes every metadata file; per-frame payloads go through the save_*
// helpers below.
inline void save_dataset_meta(const Dataset& ds) {
  namespace fs = std::filesystem;
  using nlohmann::json;
  using namespace dataset_detail;
  fs::create_directories(ds.root + "/lidar");
  if (ds.has_template) fs::create_directories(ds.root + "/template");
  for (const DatasetCamera& c : ds.cameras)
    for (const char* sub : {"/images/cam", "/sky/cam", "/depth/cam"})
      fs::create_directories(ds.root + sub + std::to_string(c.intrinsics.id));

  save_json(ds.root + "/manifest.json",
            json{{"name", ds.name},
                 {"n_frames", ds.n_frames},
                 {"budget_scale", ds.budget_scale},
                 {"template", ds.has_template ? ds.template_name : ""},
                 {"timestamps", ds.timestamps}});

  json cams = json::array();
  for (const DatasetCamera& c : ds.cameras) {
    json frames = json::array();
    for (const SE3& e : c.cam_from_world) {
      Vec4 q = mat_to_quat(e.R);
      frames.push_back({{"q", quat_json(q)}, {"t", vec3_json(e.t)}});
    }
    cams.push_back({{"id", c.intrinsics.id},
                    {"width", c.intrinsics.width},
                    {"height", c.intrinsics.height},
                    {"fx", c.intrinsics.fx},
                    {"fy", c.intrinsics.fy},
                    {"cx", c.intrinsics.cx},
                    {"cy", c.intrinsics.cy},
                    {"near", c.intrinsics.near_clip},
                    {"far", c.intrinsics.far_clip},
                    {"frames", frames}});
  }
  save_json(ds.root + "/cameras.json", cams);

  save_json(ds.root + "/tracklets_3d.json", tracklets_json(ds.tracklets));

  for (const DatasetCamera& c : ds.cameras) {
    json dets = json::array();
    for (const Track2d& tr : ds.tracks2d) {
      if (tr.cam_id != c.intrinsics.id) continue;
      json frames = json::array();
      for (std::size_t f = 0; f < tr.box.size(); ++f)
        frames.push_back({{"valid", tr.valid[f] != 0},
                          {"box", json::array({tr.box[f].x0, tr.box[f].y0,
                                               tr.box[f].x1, tr.box[f].y1})}});
      dets.push_back({{"local_id", tr.local_id}, {"frames", frames}});
    }
    save_json(ds.root + "/detections_cam" + std::to_string(c.intrinsics.id) +
                  ".json",
              dets);
  }

  json poses = json::array();
  for (const BodyPoseInit& p : ds.poses_init) {
    json frames = json::array();
    for (std::size_t f = 0; f < p.body.n_frames(); ++f) {
      json theta = json::array();
      for (const Vec4& q : p.body.theta[f])
        for (int c = 0; c < 4; ++c) theta.push_back(q[c]);
      frames.push_back({{"valid", p.body.valid[f] != 0}, {"theta", theta}});
    }
    poses.push_back({{"cam", p.cam_id},
                     {"local_id", p.local_id},
                     {"n_joints", p.body.n_joints},
                     {"frames", frames}});
  }
  save_json(ds.root + "/poses_init.json", poses);

  if (ds.has_template) {
    const ArticulatedTemplate& t = ds.human_template;
    json verts = json::array(), faces = json::array(), joints = json::array();
    json shape = json::array(), pose_b = json::array();
    for (const Vec3& v : t.vertices)
      for (int c = 0; c < 3; ++c) verts.push_back(v[c]);
    for (const auto& f : t.faces)
      for (int c = 0; c < 3; ++c) faces.push_back(f[c]);
    for (const Vec3& v : t.joints)
      for (int c = 0; c < 3; ++c) joints.push_back(v[c]);
    for (const Vec3& v : t.shape_basis)
      for (int c = 0; c < 3; ++c) shape.push_back(v[c]);
    for (const Vec3& v : t.pose_basis)
      for (int c = 0; c < 3; ++c) pose_b.push_back(v[c]);
    save_json(ds.template_path(), json{{"vertices", verts},
                                       {"faces", faces},
                                       {"joints", joints},
                                       {"parents", t.parent},
                                       {"skinning", t.skinning},
                                       {"n_shapes", t.n_shapes},
                                       {"shape_basis", shape},
                                       {"pose_basis", pose_b}});
  }

  save_json(ds.root + "/nvs_split.json", json{{"test_frames", ds.test_frames}});
}

inline void save_image(const Dataset& ds, int cam, int frame,
                       const std::vector<double>& pixels) {
  const Camera& c = ds.cameras.at(cam).intrinsics;
  write_rgb16(ds.image_path(cam, frame), pixels, c.width, c.height);
}

inline void save_sky_mask(const Dataset& ds, int cam, int frame,
                          const std::vector<double>& mask) {
  const Camera& c = ds.cameras.at(cam).intrinsics;
  write_gray8(ds.sky_path(cam, frame), mask, c.width, c.height);
}

inline void save_depth(const Dataset& ds, int cam, int frame,
                       const std::vector<DepthSample>& samples) {
  std::vector<double> u(samples.size()), v(samples.size()), r(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    u[i] = samples[i].u;
    v[i] = samples[i].v;
    r[i] = samples[i].range;
  }
  SgbinWriter w(ds.depth_path(cam, frame));
  w.put_f64("u", u);
  w.put_f64("v", v);
  w.put_f64("range", r);
  w.finish();
}

inline void save_lidar(const Dataset& ds, int frame, const std::vector<Vec3>& pts) {
  std::vector<double> flat(pts.size() * 3);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int c = 0; c < 3; ++c) flat[i * 3 + c] = pts[i][c];
  SgbinWriter w(ds.lidar_path(frame));
  w.put_f64("points", flat);
  w.finish();
}

// Extra ground-truth files only synthetic datasets carry.
inline void save_gt_tracklets(const std::string& root,
                              const std::vector<Tracklet3d>& tracklets) {
  dataset_detail::save_json(root + "/tracklets_gt.json",
                            dataset_detail::tracklets_json(tracklets));
}

inline void save_gt_associations(const std::string& root,
                                 const std::vector<AssociationRecord>& assoc) {
  using nlohmann::json;
  json arr = json::array();
  for (const AssociationRecord& a : assoc)
    arr.push_back({{"cam", a.cam_id}, {"local_id", a.local_id},
                   {"tracklet_id", a.tracklet_id}});
  dataset_detail::save_json(root + "/association_gt.json", arr);
}

inline Dataset load_dataset(const std::string& root) {
  using nlohmann::json;
  using namespace dataset_detail;
  Dataset ds;
  ds.root = root;

  json manifest = load_json(root + "/manifest.json");
  ds.name = manifest.at("name");
  ds.n_frames = manifest.at("n_frames");
  ds.budget_scale = manifest.at("budget_scale");
  std::string tmpl_name = manifest.at("template");
  ds.timestamps = manifest.at("timestamps").get<std::vector<double>>();
  if (ds.n_frames <= 0 || static_cast<int>(ds.timestamps.size()) != ds.n_frames)
    throw std::runtime_error("dataset: inconsistent frame count in manifest");
  for (int f = 1; f < ds.n_frames; ++f)
    if (!(ds.timestamps[f] > ds.timestamps[f - 1]))
      throw std::runtime_error("dataset: timestamps not strictly increasing");

  for (const json& j : load_json(root + "/cameras.json")) {
    DatasetCamera c;
    c.intrinsics.id = j.at("id");
    c.intrinsics.width = j.at("width");
    c.intrinsics.height = j.at("height");
    c.intrinsics.fx = j.at("fx");
    c.intrinsics.fy = j.at("fy");
    c.intrinsics.cx = j.at("cx");
    c.intrinsics.cy = j.at("cy");
    c.intrinsics.near_clip = j.at("near");
    c.intrinsics.far_clip = j.at("far");
    const json& frames = j.at("frames");
    if (static_cast<int>(frames.size()) != ds.n_frames)
      throw std::runtime_error("dataset: camera frame count mismatch");
    for (const json& f : frames)
      c.cam_from_world.push_back(
          SE3::from_quat_trans(quat_from(f.at("q")), vec3_from(f.at("t"))));
    ds.cameras.push_back(std::move(c));
  }
  if (ds.cameras.empty()) throw std::runtime_error("dataset: no cameras");

  for (std::size_t c = 0; c < ds.cameras.size(); ++c)
    for (int f = 0; f < ds.n_frames; ++f)
      if (!std::filesystem::exists(ds.image_path(static_cast<int>(c), f)))
        throw std::runtime_error("dataset: missing image " +
                                 ds.image_path(static_cast<int>(c), f));

  ds.tracklets =
      tracklets_from_json(load_json(root + "/tracklets_3d.json"), ds.n_frames);

  for (const DatasetCamera& c : ds.cameras) {
    std::string det_path = root + "/detections_cam" +
                           std::to_string(c.intrinsics.id) + ".json";
    if (!std::filesystem::exists(det_path)) continue;
    for (const json& j : load_json(det_path)) {
      Track2d tr;
      tr.cam_id = c.intrinsics.id;
      tr.local_id = j.at("local_id");
      const json& frames = j.at("frames");
      if (static_cast<int>(frames.size()) != ds.n_frames)
        throw std::runtime_error("dataset: detection frame count mismatch");
      for (const json& f : frames) {
        tr.valid.push_back(f.at("valid").get<bool>() ? 1 : 0);
        const json& b = f.at("box");
        tr.box.push_back({b[0], b[1], b[2], b[3]});
      }
      ds.tracks2d.push_back(std::move(tr));
    }
  }

  std::string poses_path = root + "/poses_init.json";
  if (std::filesystem::exists(poses_path)) {
    for (const json& j : load_json(poses_path)) {
      BodyPoseInit p;
      p.cam_id = j.at("cam");
      p.local_id = j.at("local_id");
      p.body.n_joints = j.at("n_joints");
      const json& frames = j.at("frames");
      if (static_cast<int>(frames.size()) != ds.n_frames)
        throw std::runtime_error("dataset: pose frame count mismatch");
      for (const json& f : frames) {
        p.body.valid.push_back(f.at("valid").get<bool>() ? 1 : 0);
        p.body.provenance.push_back(
            static_cast<std::uint8_t>(PoseProvenance::kDetected));
        const json& theta = f.at("theta");
        if (static_cast<int>(theta.size()) != p.body.n_joints * 4)
          throw std::runtime_error("dataset: pose theta size mismatch");
        std::vector<Vec4> qs(p.body.n_joints);
        for (int k = 0; k < p.body.n_joints; ++k)
          qs[k] = Vec4(theta[k * 4], theta[k * 4 + 1], theta[k * 4 + 2],
                       theta[k * 4 + 3]);
        p.body.theta.push_back(std::move(qs));
      }
      ds.poses_init.push_back(std::move(p));
    }
  }

  if (!tmpl_name.empty()) {
    ds.template_name = tmpl_name;
    json j = load_json(ds.template_path());
    ArticulatedTemplate& t = ds.human_template;
    auto vecs = [](const json& flat) {
      std::vector<Vec3> out(flat.size() / 3);
      for (std::size_t i = 0; i < out.size(); ++i)
        out[i] = Vec3(flat[i * 3], flat[i * 3 + 1], flat[i * 3 + 2]);
      return out;
    };
    t.vertices = vecs(j.at("vertices"));
    const json& faces = j.at("faces");
    for (std::size_t i = 0; i + 2 < faces.size(); i += 3)
      t.faces.push_back({faces[i], faces[i + 1], faces[i + 2]});
    t.joints = vecs(j.at("joints"));
    t.parent = j.at("parents").get<std::vector<int>>();
    t.skinning = j.at("skinning").get<std::vector<double>>();
    t.n_shapes = j.at("n_shapes");
    t.shape_basis = vecs(j.at("shape_basis"));
    t.pose_basis = vecs(j.at("pose_basis"));
    t.validate();
    ds.has_template = true;
  }

  std::string split_path = root + "/nvs_split.json";
  if (std::filesystem::exists(split_path))
    ds.test_frames = load_json(split_path).at("test_frames").get<std::vector<int>>();

  return ds;
}

inline std::vector<Tracklet3d> load_gt_tracklets(const Dataset& ds) {
  return dataset_detail::tracklets_from_json(
      dataset_detail::load_json(ds.root + "/tracklets_gt.json"), ds.n_frames);
}

inline std::vector<AssociationRecord> load_gt_associations(const Dataset& ds) {
  using nlohmann::json;
  std::vector<AssociationRecord> out;
  for (const json& j :
       dataset_detail::load_json(ds.root + "/association_gt.json"))
    out.push_back({j.at("cam"), j.at("local_id"), j.at("tracklet_id")});
  return out;
}

}  // namespace splatgraph
