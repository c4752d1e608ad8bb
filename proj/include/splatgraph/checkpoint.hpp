#pragma once

#include <string>
#include <vector>

#include "splatgraph/scene_graph.hpp"
#include "splatgraph/sgbin.hpp"

namespace splatgraph {

namespace checkpoint_detail {

inline std::vector<double> flatten3(const std::vector<Vec3>& v) {
  std::vector<double> out(v.size() * 3);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int c = 0; c < 3; ++c) out[i * 3 + c] = v[i][c];
  return out;
}

inline std::vector<double> flatten4(const std::vector<Vec4>& v) {
  std::vector<double> out(v.size() * 4);
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int c = 0; c < 4; ++c) out[i * 4 + c] = v[i][c];
  return out;
}

inline std::vector<Vec3> unflatten3(const std::vector<double>& flat) {
  if (flat.size() % 3 != 0) throw std::runtime_error("checkpoint: bad vec3 payload");
  std::vector<Vec3> out(flat.size() / 3);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = Vec3(flat[i * 3], flat[i * 3 + 1], flat[i * 3 + 2]);
  return out;
}

inline std::vector<Vec4> unflatten4(const std::vector<double>& flat) {
  if (flat.size() % 4 != 0) throw std::runtime_error("checkpoint: bad vec4 payload");
  std::vector<Vec4> out(flat.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = Vec4(flat[i * 4], flat[i * 4 + 1], flat[i * 4 + 2], flat[i * 4 + 3]);
  return out;
}

inline void write_blobs(SgbinWriter& w, const std::string& p, const GaussianSet& g) {
  w.put_i64(p + "sh_degree", {g.sh_degree});
  w.put_f64(p + "mean", flatten3(g.mean));
  w.put_f64(p + "rot", flatten4(g.rot));
  w.put_f64(p + "log_scale", flatten3(g.log_scale));
  w.put_f64(p + "opacity_raw", g.opacity_raw);
  w.put_f64(p + "sh", g.sh);
  w.put_bytes(p + "source", g.source.data(), g.source.size());
}

inline GaussianSet read_blobs(const SgbinFile& f, const std::string& p) {
  GaussianSet g;
  g.sh_degree = static_cast<int>(f.i64(p + "sh_degree").at(0));
  g.mean = unflatten3(f.f64(p + "mean"));
  g.rot = unflatten4(f.f64(p + "rot"));
  g.log_scale = unflatten3(f.f64(p + "log_scale"));
  g.opacity_raw = f.f64(p + "opacity_raw");
  g.sh = f.f64(p + "sh");
  g.source = f.bytes(p + "source");
  std::size_t n = g.mean.size();
  if (g.rot.size() != n || g.log_scale.size() != n || g.opacity_raw.size() != n ||
      g.source.size() != n || g.sh.size() != n * g.sh_stride())
    throw std::runtime_error("checkpoint: inconsistent blob arrays at " + p);
  return g;
}

}  // namespace checkpoint_detail

// Serializes the full scene state under a record-name prefix so callers can
// embed it next to their own records (the trainer adds optimizer state).
inline void write_scene_records(SgbinWriter& w, const SceneGraph& scene,
                                const std::string& prefix = "") {
  using namespace checkpoint_detail;
  w.put_f64(prefix + "timestamps", scene.timestamps);
  write_blobs(w, prefix + "bg/", scene.background);
  w.put_i64(prefix + "sky/size", {scene.sky.height(), scene.sky.width()});
  w.put_f64(prefix + "sky/raw", scene.sky.texels());
  for (int l = 0; l < DeformationNet::kLayers; ++l) {
    const auto& wm = scene.deform_net.weight(l);
    const auto& bv = scene.deform_net.bias(l);
    w.put_f64(prefix + "net/w" + std::to_string(l), wm.data(),
              static_cast<std::size_t>(wm.size()));
    w.put_f64(prefix + "net/b" + std::to_string(l), bv.data(),
              static_cast<std::size_t>(bv.size()));
  }
  w.put_i64(prefix + "n_nodes", {static_cast<std::int64_t>(scene.nodes.size())});
  for (std::size_t i = 0; i < scene.nodes.size(); ++i) {
    const SceneNode& n = scene.nodes[i];
    std::string p = prefix + "node" + std::to_string(i) + "/";
    w.put_i64(p + "id", {n.id});
    w.put_string(p + "class", n.class_label);
    w.put_i64(p + "kind", {static_cast<std::int64_t>(n.kind)});
    w.put_f64(p + "box_dims", n.box_dims.data(), 3);
    write_blobs(w, p + "blob/", n.canonical);

    const TrackedPose& tp = n.pose;
    std::vector<double> base_q(tp.base.size() * 4), base_t(tp.base.size() * 3);
    for (std::size_t f = 0; f < tp.base.size(); ++f) {
      for (int c = 0; c < 4; ++c) base_q[f * 4 + c] = tp.base[f].q[c];
      for (int c = 0; c < 3; ++c) base_t[f * 3 + c] = tp.base[f].t[c];
    }
    w.put_f64(p + "track/q", base_q);
    w.put_f64(p + "track/t", base_t);
    w.put_f64(p + "track/rot_res", flatten3(tp.rot_residual));
    w.put_f64(p + "track/trans_res", flatten3(tp.trans_residual));
    w.put_bytes(p + "track/valid", tp.valid.data(), tp.valid.size());

    const ArticulatedTemplate& t = n.tmpl;
    w.put_f64(p + "tmpl/vertices", flatten3(t.vertices));
    std::vector<std::int64_t> faces(t.faces.size() * 3);
    for (std::size_t j = 0; j < t.faces.size(); ++j)
      for (int c = 0; c < 3; ++c) faces[j * 3 + c] = t.faces[j][c];
    w.put_i64(p + "tmpl/faces", faces);
    w.put_f64(p + "tmpl/joints", flatten3(t.joints));
    w.put_i64(p + "tmpl/parent",
              std::vector<std::int64_t>(t.parent.begin(), t.parent.end()));
    w.put_f64(p + "tmpl/skinning", t.skinning);
    w.put_i64(p + "tmpl/n_shapes", {t.n_shapes});
    w.put_f64(p + "tmpl/shape_basis", flatten3(t.shape_basis));
    w.put_f64(p + "tmpl/pose_basis", flatten3(t.pose_basis));

    w.put_i64(p + "skin/n_joints", {n.skin.n_joints});
    w.put_f64(p + "skin/w", n.skin.w);

    w.put_i64(p + "body/n_joints", {n.body.n_joints});
    std::vector<double> theta;
    theta.reserve(n.body.n_frames() * n.body.n_joints * 4);
    for (const auto& frame : n.body.theta)
      for (const Vec4& q : frame)
        for (int c = 0; c < 4; ++c) theta.push_back(q[c]);
    w.put_f64(p + "body/theta", theta);
    w.put_bytes(p + "body/valid", n.body.valid.data(), n.body.valid.size());
    w.put_bytes(p + "body/provenance", n.body.provenance.data(),
                n.body.provenance.size());

    std::vector<double> embed(n.embed.data(), n.embed.data() + n.embed.size());
    w.put_f64(p + "embed", embed);
    w.put_f64(p + "norm/center", n.norm_box.center.data(), 3);
    w.put_f64(p + "norm/half", n.norm_box.half.data(), 3);
  }
}

inline SceneGraph read_scene_records(const SgbinFile& f,
                                     const std::string& prefix = "") {
  using namespace checkpoint_detail;
  SceneGraph scene;
  scene.timestamps = f.f64(prefix + "timestamps");
  scene.background = read_blobs(f, prefix + "bg/");
  std::vector<std::int64_t> sky_size = f.i64(prefix + "sky/size");
  if (sky_size.size() != 2) throw std::runtime_error("checkpoint: bad sky size");
  scene.sky = EnvironmentMap(static_cast<int>(sky_size[0]),
                             static_cast<int>(sky_size[1]));
  std::vector<double> sky_raw = f.f64(prefix + "sky/raw");
  if (sky_raw.size() != scene.sky.texels().size())
    throw std::runtime_error("checkpoint: sky payload mismatch");
  scene.sky.texels() = sky_raw;
  for (int l = 0; l < DeformationNet::kLayers; ++l) {
    auto& wm = scene.deform_net.weight(l);
    auto& bv = scene.deform_net.bias(l);
    std::vector<double> wflat = f.f64(prefix + "net/w" + std::to_string(l));
    std::vector<double> bflat = f.f64(prefix + "net/b" + std::to_string(l));
    if (wflat.size() != static_cast<std::size_t>(wm.size()) ||
        bflat.size() != static_cast<std::size_t>(bv.size()))
      throw std::runtime_error("checkpoint: net layer size mismatch");
    std::copy(wflat.begin(), wflat.end(), wm.data());
    std::copy(bflat.begin(), bflat.end(), bv.data());
  }
  std::size_t n_nodes = static_cast<std::size_t>(f.i64(prefix + "n_nodes").at(0));
  for (std::size_t i = 0; i < n_nodes; ++i) {
    std::string p = prefix + "node" + std::to_string(i) + "/";
    SceneNode n;
    n.id = static_cast<int>(f.i64(p + "id").at(0));
    n.class_label = f.str(p + "class");
    n.kind = static_cast<NodeKind>(f.i64(p + "kind").at(0));
    std::vector<double> dims = f.f64(p + "box_dims");
    n.box_dims = Vec3(dims.at(0), dims.at(1), dims.at(2));
    n.canonical = read_blobs(f, p + "blob/");

    std::vector<double> base_q = f.f64(p + "track/q");
    std::vector<double> base_t = f.f64(p + "track/t");
    if (base_q.size() % 4 != 0 || base_t.size() / 3 != base_q.size() / 4)
      throw std::runtime_error("checkpoint: bad track payload");
    n.pose.base.resize(base_q.size() / 4);
    for (std::size_t j = 0; j < n.pose.base.size(); ++j) {
      n.pose.base[j].q = Vec4(base_q[j * 4], base_q[j * 4 + 1], base_q[j * 4 + 2],
                              base_q[j * 4 + 3]);
      n.pose.base[j].t = Vec3(base_t[j * 3], base_t[j * 3 + 1], base_t[j * 3 + 2]);
    }
    n.pose.rot_residual = unflatten3(f.f64(p + "track/rot_res"));
    n.pose.trans_residual = unflatten3(f.f64(p + "track/trans_res"));
    n.pose.valid = f.bytes(p + "track/valid");
    if (n.pose.rot_residual.size() != n.pose.base.size() ||
        n.pose.trans_residual.size() != n.pose.base.size() ||
        n.pose.valid.size() != n.pose.base.size())
      throw std::runtime_error("checkpoint: track arrays mismatch");

    n.tmpl.vertices = unflatten3(f.f64(p + "tmpl/vertices"));
    std::vector<std::int64_t> faces = f.i64(p + "tmpl/faces");
    for (std::size_t j = 0; j + 2 < faces.size(); j += 3)
      n.tmpl.faces.push_back({static_cast<int>(faces[j]),
                              static_cast<int>(faces[j + 1]),
                              static_cast<int>(faces[j + 2])});
    n.tmpl.joints = unflatten3(f.f64(p + "tmpl/joints"));
    for (std::int64_t v : f.i64(p + "tmpl/parent"))
      n.tmpl.parent.push_back(static_cast<int>(v));
    n.tmpl.skinning = f.f64(p + "tmpl/skinning");
    n.tmpl.n_shapes = static_cast<int>(f.i64(p + "tmpl/n_shapes").at(0));
    n.tmpl.shape_basis = unflatten3(f.f64(p + "tmpl/shape_basis"));
    n.tmpl.pose_basis = unflatten3(f.f64(p + "tmpl/pose_basis"));

    n.skin.n_joints = static_cast<int>(f.i64(p + "skin/n_joints").at(0));
    n.skin.w = f.f64(p + "skin/w");

    n.body.n_joints = static_cast<int>(f.i64(p + "body/n_joints").at(0));
    std::vector<double> theta = f.f64(p + "body/theta");
    n.body.valid = f.bytes(p + "body/valid");
    n.body.provenance = f.bytes(p + "body/provenance");
    std::size_t per_frame = static_cast<std::size_t>(n.body.n_joints) * 4;
    if (per_frame > 0) {
      if (theta.size() % per_frame != 0)
        throw std::runtime_error("checkpoint: bad body payload");
      n.body.theta.resize(theta.size() / per_frame);
      for (std::size_t fr = 0; fr < n.body.theta.size(); ++fr) {
        n.body.theta[fr].resize(n.body.n_joints);
        for (int k = 0; k < n.body.n_joints; ++k)
          n.body.theta[fr][k] =
              Vec4(theta[fr * per_frame + k * 4], theta[fr * per_frame + k * 4 + 1],
                   theta[fr * per_frame + k * 4 + 2],
                   theta[fr * per_frame + k * 4 + 3]);
      }
    }

    std::vector<double> embed = f.f64(p + "embed");
    n.embed = Eigen::Map<const Eigen::VectorXd>(embed.data(),
                                                static_cast<Eigen::Index>(embed.size()));
    std::vector<double> center = f.f64(p + "norm/center");
    std::vector<double> half = f.f64(p + "norm/half");
    n.norm_box.center = Vec3(center.at(0), center.at(1), center.at(2));
    n.norm_box.half = Vec3(half.at(0), half.at(1), half.at(2));

    scene.nodes.push_back(std::move(n));
  }
  return scene;
}

inline void save_scene(const std::string& path, const SceneGraph& scene) {
  SgbinWriter w(path);
  w.put_string("format", "scene/1");
  write_scene_records(w, scene);
  w.finish();
}

inline SceneGraph load_scene(const std::string& path) {
  SgbinFile f = SgbinFile::load(path);
  if (f.str("format") != "scene/1")
    throw std::runtime_error("checkpoint: not a scene file: " + path);
  return read_scene_records(f);
}

}  // namespace splatgraph
