#include "hamsafe/learner.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

namespace hamsafe {

using ad::Tape;
using ad::Var;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Dataset

void Trajectory::shift_to_origin() {
  if (p.empty()) return;
  const Vec3 p0 = p.front();
  for (auto& pi : p) pi -= p0;
}

void Dataset::shift_to_origin() {
  for (auto& tr : trajectories) tr.shift_to_origin();
}

size_t Dataset::sample_count() const {
  size_t n = 0;
  for (const auto& tr : trajectories) n += tr.intervals();
  return n;
}

std::vector<IntervalSample> interval_samples(const Dataset& ds) {
  std::vector<IntervalSample> out;
  out.reserve(ds.sample_count());
  for (const auto& tr : ds.trajectories) {
    for (size_t n = 0; n < tr.intervals(); ++n) {
      IntervalSample s;
      s.dt = tr.t[n + 1] - tr.t[n];
      if (s.dt <= 0.0) throw std::invalid_argument("interval_samples: non-increasing times");
      s.p0 = tr.p[n];
      s.p1 = tr.p[n + 1];
      s.R0 = tr.R[n];
      s.R1 = tr.R[n + 1];
      s.zeta0 = tr.zeta[n];
      s.zeta1 = tr.zeta[n + 1];
      s.u = tr.u[n];
      out.push_back(std::move(s));
    }
  }
  return out;
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_dataset: cannot open " + path);
  Dataset ds;
  ds.input_dim = -1;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    Trajectory tr;
    for (const auto& v : j.at("t")) tr.t.push_back(v.get<double>());
    for (const auto& q : j.at("q")) {
      if (q.size() != 12) throw std::runtime_error("load_dataset: q entries must have 12 values");
      tr.p.push_back(Vec3(q[0], q[1], q[2]));
      Mat3 R;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) R(r, c) = q[3 + 3 * r + c];
      tr.R.push_back(R);
    }
    for (const auto& z : j.at("zeta")) {
      Vec6 zeta;
      for (int i = 0; i < 6; ++i) zeta(i) = z.at(i);
      tr.zeta.push_back(zeta);
    }
    for (const auto& uu : j.at("u")) {
      Eigen::VectorXd u(uu.size());
      for (size_t i = 0; i < uu.size(); ++i) u(static_cast<int>(i)) = uu[i];
      tr.u.push_back(u);
      if (ds.input_dim < 0) ds.input_dim = static_cast<int>(u.size());
    }
    if (tr.p.size() != tr.t.size() || tr.zeta.size() != tr.t.size() ||
        tr.u.size() + 1 != tr.t.size()) {
      throw std::runtime_error("load_dataset: inconsistent sequence lengths");
    }
    ds.trajectories.push_back(std::move(tr));
  }
  if (ds.input_dim < 0) ds.input_dim = 0;
  ds.shift_to_origin();
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_dataset: cannot open " + path);
  for (const auto& tr : ds.trajectories) {
    json jt = json::array(), jq = json::array(), jz = json::array(), ju = json::array();
    for (double t : tr.t) jt.push_back(t);
    for (size_t n = 0; n < tr.p.size(); ++n) {
      json q = json::array();
      for (int i = 0; i < 3; ++i) q.push_back(tr.p[n](i));
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) q.push_back(tr.R[n](r, c));
      jq.push_back(q);
    }
    for (const auto& z : tr.zeta) {
      json e = json::array();
      for (int i = 0; i < 6; ++i) e.push_back(z(i));
      jz.push_back(e);
    }
    for (const auto& u : tr.u) {
      json e = json::array();
      for (int i = 0; i < u.size(); ++i) e.push_back(u(i));
      ju.push_back(e);
    }
    out << json{{"t", jt}, {"q", jq}, {"zeta", jz}, {"u", ju}}.dump() << "\n";
  }
}

std::string dataset_hash(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("dataset_hash: cannot open " + path);
  uint64_t h = 1469598103934665603ull;
  char c;
  while (in.get(c)) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

// ---------------------------------------------------------------------------
// Parameters

int Mlp::parameter_count() const {
  int n = 0;
  for (const auto& w : W) n += static_cast<int>(w.size());
  for (const auto& bb : b) n += static_cast<int>(bb.size());
  return n;
}

namespace {

Mlp make_mlp(int in, const std::vector<int>& hidden, int out, double out_scale,
             const Eigen::RowVectorXd& out_bias, std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Mlp m;
  std::vector<int> dims;
  dims.push_back(in);
  for (int h : hidden) dims.push_back(h);
  dims.push_back(out);
  for (size_t l = 0; l + 1 < dims.size(); ++l) {
    const bool last = (l + 2 == dims.size());
    const double std = (last ? out_scale : 1.0) / std::sqrt(static_cast<double>(dims[l]));
    Eigen::MatrixXd W(dims[l], dims[l + 1]);
    for (int i = 0; i < W.size(); ++i) W.data()[i] = std * gauss(rng);
    Eigen::RowVectorXd b = Eigen::RowVectorXd::Zero(dims[l + 1]);
    if (last && out_bias.size() == b.size()) b = out_bias;
    m.W.push_back(std::move(W));
    m.b.push_back(std::move(b));
  }
  return m;
}

Eigen::MatrixXd b_prior(int m) {
  if (m == 4) return actuation_matrix(Actuation::Quadrotor);
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(6, m);
  for (int j = 0; j < std::min(m, 6); ++j) B(j, j) = 1.0;
  return B;
}

std::vector<const Mlp*> active_mlps(const ModelParams& p) {
  std::vector<const Mlp*> nets;
  if (p.spec.cls == ModelClass::Uav3d) {
    nets = {&p.lj, &p.bnet};
  } else {
    nets = {&p.l1, &p.l2};
    if (p.spec.learn_potential) nets.push_back(&p.umlp);
  }
  return nets;
}

std::vector<Mlp*> active_mlps(ModelParams& p) {
  std::vector<Mlp*> nets;
  if (p.spec.cls == ModelClass::Uav3d) {
    nets = {&p.lj, &p.bnet};
  } else {
    nets = {&p.l1, &p.l2};
    if (p.spec.learn_potential) nets.push_back(&p.umlp);
  }
  return nets;
}

bool has_uw(const ModelSpec& s) {
  return s.cls == ModelClass::Planar && s.learn_potential;
}

}  // namespace

int ModelParams::parameter_count() const {
  int n = 0;
  for (const Mlp* m : active_mlps(*this)) n += m->parameter_count();
  if (has_uw(spec)) n += 3;
  return n;
}

ModelParams init_params(const ModelSpec& spec, std::mt19937_64& rng) {
  ModelParams p;
  p.spec = spec;
  if (spec.cls == ModelClass::Uav3d) {
    Eigen::RowVectorXd lj_bias(6);
    lj_bias << 1, 0, 1, 0, 0, 1;  // L = I
    p.lj = make_mlp(9, spec.hidden, 6, 0.05, lj_bias, rng);
    const Eigen::MatrixXd prior = 0.7 * b_prior(spec.input_dim);
    Eigen::RowVectorXd b_bias(6 * spec.input_dim);
    for (int i = 0; i < 6; ++i)
      for (int j = 0; j < spec.input_dim; ++j) b_bias(i * spec.input_dim + j) = prior(i, j);
    p.bnet = make_mlp(9, spec.hidden, 6 * spec.input_dim, 0.05, b_bias, rng);
  } else {
    p.l1 = make_mlp(9, spec.hidden, 1, 0.05, Eigen::RowVectorXd::Zero(1), rng);
    p.l2 = make_mlp(9, spec.hidden, 1, 0.05, Eigen::RowVectorXd::Zero(1), rng);
    if (spec.learn_potential) {
      p.umlp = make_mlp(9, spec.hidden, 1, 0.01, Eigen::RowVectorXd::Zero(1), rng);
      p.uw = Vec3(0.0, 0.0, spec.mass_prior * spec.gravity);
    }
  }
  return p;
}

Eigen::VectorXd flatten(const ModelParams& params) {
  Eigen::VectorXd theta(params.parameter_count());
  int k = 0;
  for (const Mlp* m : active_mlps(params)) {
    for (const auto& W : m->W) {
      theta.segment(k, W.size()) = Eigen::Map<const Eigen::VectorXd>(W.data(), W.size());
      k += static_cast<int>(W.size());
    }
    for (const auto& b : m->b) {
      theta.segment(k, b.size()) = b.transpose();
      k += static_cast<int>(b.size());
    }
  }
  if (has_uw(params.spec)) {
    theta.segment(k, 3) = params.uw;
    k += 3;
  }
  return theta;
}

void unflatten(const Eigen::VectorXd& theta, ModelParams& params) {
  int k = 0;
  for (Mlp* m : active_mlps(params)) {
    for (auto& W : m->W) {
      Eigen::Map<Eigen::VectorXd>(W.data(), W.size()) = theta.segment(k, W.size());
      k += static_cast<int>(W.size());
    }
    for (auto& b : m->b) {
      b = theta.segment(k, b.size()).transpose();
      k += static_cast<int>(b.size());
    }
  }
  if (has_uw(params.spec)) {
    params.uw = theta.segment(k, 3);
    k += 3;
  }
  if (k != theta.size()) throw std::invalid_argument("unflatten: size mismatch");
}

// ---------------------------------------------------------------------------
// Tape builders shared by training, rollout, and the model interface.

namespace {

struct MlpVars {
  std::vector<Var> W, b;
};

struct ParamVars {
  MlpVars lj, bnet, l1, l2, umlp;
  Var uw;  // 1 x 3
};

MlpVars mlp_vars(Tape& t, const Mlp& m, bool leaf) {
  MlpVars mv;
  for (const auto& W : m.W) mv.W.push_back(leaf ? t.leaf(W) : t.constant(W));
  for (const auto& b : m.b) mv.b.push_back(leaf ? t.leaf(b) : t.constant(b));
  return mv;
}

ParamVars param_vars(Tape& t, const ModelParams& p, bool leaf) {
  ParamVars pv;
  if (p.spec.cls == ModelClass::Uav3d) {
    pv.lj = mlp_vars(t, p.lj, leaf);
    pv.bnet = mlp_vars(t, p.bnet, leaf);
  } else {
    pv.l1 = mlp_vars(t, p.l1, leaf);
    pv.l2 = mlp_vars(t, p.l2, leaf);
    if (p.spec.learn_potential) {
      pv.umlp = mlp_vars(t, p.umlp, leaf);
      const Eigen::MatrixXd uw = p.uw.transpose();
      pv.uw = leaf ? t.leaf(uw) : t.constant(uw);
    }
  }
  return pv;
}

std::vector<Var> collect_param_vars(const ModelParams& p, const ParamVars& pv) {
  std::vector<Var> out;
  const auto push_mlp = [&](const MlpVars& mv) {
    for (const Var& w : mv.W) out.push_back(w);
    for (const Var& b : mv.b) out.push_back(b);
  };
  if (p.spec.cls == ModelClass::Uav3d) {
    push_mlp(pv.lj);
    push_mlp(pv.bnet);
  } else {
    push_mlp(pv.l1);
    push_mlp(pv.l2);
    if (p.spec.learn_potential) {
      push_mlp(pv.umlp);
      out.push_back(pv.uw);
    }
  }
  return out;
}

Var mlp_forward(Tape& t, const MlpVars& mv, Var X) {
  Var h = X;
  for (size_t l = 0; l < mv.W.size(); ++l) {
    h = t.add(t.matmul(h, mv.W[l]), t.broadcast_rows(mv.b[l], t.rows(h)));
    if (l + 1 < mv.W.size()) h = t.tanh(h);
  }
  return h;
}

struct SV {
  std::array<Var, 3> p;
  std::array<Var, 9> r;   // rotation entries, row-major
  std::array<Var, 6> pm;
};

struct MinvVars {
  Var minv;                 // mass inverse (scalar per sample), multiplies I3
  std::array<Var, 9> jinv;  // inertia inverse, row-major
};

std::array<Var, 3> cross(Tape& t, const std::array<Var, 3>& a, const std::array<Var, 3>& b) {
  return {t.sub(t.mul(a[1], b[2]), t.mul(a[2], b[1])),
          t.sub(t.mul(a[2], b[0]), t.mul(a[0], b[2])),
          t.sub(t.mul(a[0], b[1]), t.mul(a[1], b[0]))};
}

MinvVars build_minv(Tape& t, const ParamVars& pv, const ModelSpec& spec,
                    const std::array<Var, 9>& r) {
  std::array<Var, 9> rr = r;
  const Var X = t.hcat(std::span<const Var>(rr.data(), 9));
  MinvVars mv;
  if (spec.cls == ModelClass::Uav3d) {
    mv.minv = t.constant(1.0 / spec.known_mass);
    const Var y = mlp_forward(t, pv.lj, X);  // B x 6 lower-triangular entries
    const Var l00 = t.col(y, 0), l10 = t.col(y, 1), l11 = t.col(y, 2);
    const Var l20 = t.col(y, 3), l21 = t.col(y, 4), l22 = t.col(y, 5);
    const Var eps = t.constant(spec.spd_eps);
    // J^-1 = L L^T + eps I
    const Var j00 = t.add(t.mul(l00, l00), eps);
    const Var j01 = t.mul(l00, l10);
    const Var j02 = t.mul(l00, l20);
    const Var j11 = t.add(t.add(t.mul(l10, l10), t.mul(l11, l11)), eps);
    const Var j12 = t.add(t.mul(l10, l20), t.mul(l11, l21));
    const Var j22 =
        t.add(t.add(t.add(t.mul(l20, l20), t.mul(l21, l21)), t.mul(l22, l22)), eps);
    mv.jinv = {j00, j01, j02, j01, j11, j12, j02, j12, j22};
  } else {
    const Var s1 = mlp_forward(t, pv.l1, X);
    const Var root_m = t.add(t.constant(std::sqrt(1.0 / spec.mass_prior)), s1);
    mv.minv = t.mul(root_m, root_m);
    const Var s2 = mlp_forward(t, pv.l2, X);
    const Var root_j = t.add(t.constant(std::sqrt(1.0 / spec.inertia_yy_prior)), s2);
    const Var jyy = t.mul(root_j, root_j);
    const Var zero = t.constant(0.0);
    mv.jinv = {t.constant(1.0 / spec.inertia_xx_known), zero, zero,
               zero, jyy, zero,
               zero, zero, t.constant(1.0 / spec.inertia_zz_known)};
  }
  return mv;
}

Var build_potential(Tape& t, const ParamVars& pv, const ModelSpec& spec,
                    const std::array<Var, 3>& p, const std::array<Var, 9>& r) {
  if (spec.cls == ModelClass::Uav3d) {
    return t.scale(p[2], spec.known_mass * spec.gravity);
  }
  if (!spec.learn_potential) return t.constant(0.0);
  std::array<Var, 9> rr = r;
  const Var X = t.hcat(std::span<const Var>(rr.data(), 9));
  Var U = mlp_forward(t, pv.umlp, X);
  for (int i = 0; i < 3; ++i) {
    U = t.add(U, t.mul(t.col(pv.uw, i), p[i]));
  }
  return U;
}

// 6 x m input-gain entries (row-major); empty for the known identity gain.
std::vector<Var> build_input_gain(Tape& t, const ParamVars& pv, const ModelSpec& spec,
                                  const std::array<Var, 9>& r) {
  if (spec.cls != ModelClass::Uav3d) return {};
  std::array<Var, 9> rr = r;
  const Var X = t.hcat(std::span<const Var>(rr.data(), 9));
  const Var y = mlp_forward(t, pv.bnet, X);  // B x 6m
  std::vector<Var> entries;
  entries.reserve(6 * spec.input_dim);
  for (int k = 0; k < 6 * spec.input_dim; ++k) entries.push_back(t.col(y, k));
  return entries;
}

std::array<Var, 3> mat3_vec(Tape& t, const std::array<Var, 9>& A, const std::array<Var, 3>& x) {
  std::array<Var, 3> y;
  for (int i = 0; i < 3; ++i) {
    y[i] = t.add(t.add(t.mul(A[3 * i + 0], x[0]), t.mul(A[3 * i + 1], x[1])),
                 t.mul(A[3 * i + 2], x[2]));
  }
  return y;
}

std::array<Var, 9> mat3_inverse(Tape& t, const std::array<Var, 9>& A) {
  const Var& a = A[0];
  const Var& b = A[1];
  const Var& c = A[2];
  const Var& d = A[3];
  const Var& e = A[4];
  const Var& f = A[5];
  const Var& g = A[6];
  const Var& h = A[7];
  const Var& i = A[8];
  const Var c00 = t.sub(t.mul(e, i), t.mul(f, h));
  const Var c01 = t.sub(t.mul(c, h), t.mul(b, i));
  const Var c02 = t.sub(t.mul(b, f), t.mul(c, e));
  const Var c10 = t.sub(t.mul(f, g), t.mul(d, i));
  const Var c11 = t.sub(t.mul(a, i), t.mul(c, g));
  const Var c12 = t.sub(t.mul(c, d), t.mul(a, f));
  const Var c20 = t.sub(t.mul(d, h), t.mul(e, g));
  const Var c21 = t.sub(t.mul(b, g), t.mul(a, h));
  const Var c22 = t.sub(t.mul(a, e), t.mul(b, d));
  const Var det = t.add(t.add(t.mul(a, c00), t.mul(b, c10)), t.mul(c, c20));
  std::array<Var, 9> inv = {c00, c01, c02, c10, c11, c12, c20, c21, c22};
  for (auto& v : inv) v = t.div(v, det);
  return inv;
}

Var build_hamiltonian(Tape& t, const ParamVars& pv, const ModelSpec& spec, const SV& sv,
                      const MinvVars& mv) {
  const std::array<Var, 3> pvv = {sv.pm[0], sv.pm[1], sv.pm[2]};
  const std::array<Var, 3> pw = {sv.pm[3], sv.pm[4], sv.pm[5]};
  Var ke = t.mul(mv.minv,
                 t.add(t.add(t.mul(pvv[0], pvv[0]), t.mul(pvv[1], pvv[1])),
                       t.mul(pvv[2], pvv[2])));
  const std::array<Var, 3> jp = mat3_vec(t, mv.jinv, pw);
  Var rot = t.add(t.add(t.mul(pw[0], jp[0]), t.mul(pw[1], jp[1])), t.mul(pw[2], jp[2]));
  Var H = t.scale(t.add(ke, rot), 0.5);
  return t.add(H, build_potential(t, pv, spec, sv.p, sv.r));
}

struct FieldVars {
  std::array<Var, 12> qdot;
  std::array<Var, 6> pmdot;
};

FieldVars build_field(Tape& t, const ParamVars& pv, const ModelSpec& spec, const SV& sv,
                      const std::vector<Var>& u) {
  const MinvVars mv = build_minv(t, pv, spec, sv.r);
  const std::array<Var, 3> pvv = {sv.pm[0], sv.pm[1], sv.pm[2]};
  const std::array<Var, 3> pw = {sv.pm[3], sv.pm[4], sv.pm[5]};
  const std::array<Var, 3> v = {t.mul(mv.minv, pvv[0]), t.mul(mv.minv, pvv[1]),
                                t.mul(mv.minv, pvv[2])};
  const std::array<Var, 3> w = mat3_vec(t, mv.jinv, pw);

  FieldVars f;
  // p_dot = R v (rows r_i).
  for (int i = 0; i < 3; ++i) {
    f.qdot[i] = t.add(t.add(t.mul(sv.r[3 * i + 0], v[0]), t.mul(sv.r[3 * i + 1], v[1])),
                      t.mul(sv.r[3 * i + 2], v[2]));
  }
  // r_i_dot = r_i x w.
  for (int i = 0; i < 3; ++i) {
    const std::array<Var, 3> ri = {sv.r[3 * i], sv.r[3 * i + 1], sv.r[3 * i + 2]};
    const std::array<Var, 3> rd = cross(t, ri, w);
    for (int k = 0; k < 3; ++k) f.qdot[3 + 3 * i + k] = rd[k];
  }

  // Coordinate gradient of H; recorded on the tape so training can
  // differentiate through it.
  const Var H = build_hamiltonian(t, pv, spec, sv, mv);
  std::array<Var, 12> q;
  for (int i = 0; i < 3; ++i) q[i] = sv.p[i];
  for (int i = 0; i < 9; ++i) q[3 + i] = sv.r[i];
  const std::vector<Var> gH =
      t.gradient(t.sum_all(H), std::span<const Var>(q.data(), 12));

  const std::array<Var, 3> gp = {gH[0], gH[1], gH[2]};
  // Force block: -R^T grad_p H + p_v x w (+ B u).
  std::array<Var, 3> force;
  for (int i = 0; i < 3; ++i) {
    const Var rtg = t.add(t.add(t.mul(sv.r[0 + i], gp[0]), t.mul(sv.r[3 + i], gp[1])),
                          t.mul(sv.r[6 + i], gp[2]));
    force[i] = t.sub(t.constant(0.0), rtg);
  }
  const std::array<Var, 3> pvxw = cross(t, pvv, w);
  for (int i = 0; i < 3; ++i) force[i] = t.add(force[i], pvxw[i]);

  // Torque block: sum_i r_i x grad_{r_i} H + p_v x v + p_w x w (+ B u).
  std::array<Var, 3> torque = cross(t, pvv, v);
  const std::array<Var, 3> pwxw = cross(t, pw, w);
  for (int i = 0; i < 3; ++i) torque[i] = t.add(torque[i], pwxw[i]);
  for (int i = 0; i < 3; ++i) {
    const std::array<Var, 3> ri = {sv.r[3 * i], sv.r[3 * i + 1], sv.r[3 * i + 2]};
    const std::array<Var, 3> gri = {gH[3 + 3 * i], gH[3 + 3 * i + 1], gH[3 + 3 * i + 2]};
    const std::array<Var, 3> tq = cross(t, ri, gri);
    for (int k = 0; k < 3; ++k) torque[k] = t.add(torque[k], tq[k]);
  }

  // Input wrench.
  const std::vector<Var> Bent = build_input_gain(t, pv, spec, sv.r);
  const int m = static_cast<int>(u.size());
  for (int i = 0; i < 6; ++i) {
    Var bu = t.constant(0.0);
    if (Bent.empty()) {
      if (i < m) bu = u[i];  // known identity gain
    } else {
      for (int j = 0; j < m; ++j) bu = t.add(bu, t.mul(Bent[i * m + j], u[j]));
    }
    if (i < 3) {
      f.pmdot[i] = t.add(force[i], bu);
    } else {
      f.pmdot[i] = t.add(torque[i - 3], bu);
    }
  }
  return f;
}

SV sv_axpy(Tape& t, const SV& y, double a, const FieldVars& k) {
  SV out;
  for (int i = 0; i < 3; ++i) out.p[i] = t.add(y.p[i], t.scale(k.qdot[i], a));
  for (int i = 0; i < 9; ++i) out.r[i] = t.add(y.r[i], t.scale(k.qdot[3 + i], a));
  for (int i = 0; i < 6; ++i) out.pm[i] = t.add(y.pm[i], t.scale(k.pmdot[i], a));
  return out;
}

SV rk4_combine(Tape& t, const SV& y, double h, const FieldVars& k1, const FieldVars& k2,
               const FieldVars& k3, const FieldVars& k4) {
  const auto comb = [&](Var yi, Var a, Var b, Var c, Var d) {
    Var s = t.add(t.add(a, t.scale(b, 2.0)), t.add(t.scale(c, 2.0), d));
    return t.add(yi, t.scale(s, h / 6.0));
  };
  SV out;
  for (int i = 0; i < 3; ++i)
    out.p[i] = comb(y.p[i], k1.qdot[i], k2.qdot[i], k3.qdot[i], k4.qdot[i]);
  for (int i = 0; i < 9; ++i)
    out.r[i] = comb(y.r[i], k1.qdot[3 + i], k2.qdot[3 + i], k3.qdot[3 + i], k4.qdot[3 + i]);
  for (int i = 0; i < 6; ++i)
    out.pm[i] = comb(y.pm[i], k1.pmdot[i], k2.pmdot[i], k3.pmdot[i], k4.pmdot[i]);
  return out;
}

SV rk4_rollout(Tape& t, const ParamVars& pv, const ModelSpec& spec, const SV& y0,
               const std::vector<Var>& u, double dt, int substeps) {
  SV y = y0;
  const double h = dt / std::max(substeps, 1);
  for (int s = 0; s < std::max(substeps, 1); ++s) {
    const FieldVars k1 = build_field(t, pv, spec, y, u);
    const FieldVars k2 = build_field(t, pv, spec, sv_axpy(t, y, 0.5 * h, k1), u);
    const FieldVars k3 = build_field(t, pv, spec, sv_axpy(t, y, 0.5 * h, k2), u);
    const FieldVars k4 = build_field(t, pv, spec, sv_axpy(t, y, h, k3), u);
    y = rk4_combine(t, y, h, k1, k2, k3, k4);
  }
  return y;
}

// Momentum from velocity through the learned mass: pm = M(q) zeta.
std::array<Var, 6> momentum_from_velocity(Tape& t, const ParamVars& pv, const ModelSpec& spec,
                                          const std::array<Var, 9>& r,
                                          const std::array<Var, 3>& v,
                                          const std::array<Var, 3>& w) {
  const MinvVars mv = build_minv(t, pv, spec, r);
  std::array<Var, 6> pm;
  for (int i = 0; i < 3; ++i) pm[i] = t.div(v[i], mv.minv);
  const std::array<Var, 9> J = mat3_inverse(t, mv.jinv);
  const std::array<Var, 3> pw = mat3_vec(t, J, w);
  for (int i = 0; i < 3; ++i) pm[3 + i] = pw[i];
  return pm;
}

std::array<Var, 6> velocity_from_momentum(Tape& t, const ParamVars& pv, const ModelSpec& spec,
                                          const SV& sv) {
  const MinvVars mv = build_minv(t, pv, spec, sv.r);
  std::array<Var, 6> zeta;
  for (int i = 0; i < 3; ++i) zeta[i] = t.mul(mv.minv, sv.pm[i]);
  const std::array<Var, 3> pw = {sv.pm[3], sv.pm[4], sv.pm[5]};
  const std::array<Var, 3> w = mat3_vec(t, mv.jinv, pw);
  for (int i = 0; i < 3; ++i) zeta[3 + i] = w[i];
  return zeta;
}

Var make_col(Tape& t, const Eigen::VectorXd& v) {
  return t.constant(Eigen::MatrixXd(v));
}

// Batched loss over a group of samples sharing one interval length.
Var build_group_loss(Tape& t, const ParamVars& pv, const ModelSpec& spec,
                     const std::vector<const IntervalSample*>& group, int substeps) {
  const int B = static_cast<int>(group.size());
  const int m = static_cast<int>(group[0]->u.size());
  const auto col_of = [&](auto getter) {
    Eigen::VectorXd v(B);
    for (int i = 0; i < B; ++i) v(i) = getter(*group[i]);
    return make_col(t, v);
  };

  SV y0;
  std::array<Var, 3> v0, w0;
  for (int i = 0; i < 3; ++i) {
    y0.p[i] = col_of([&](const IntervalSample& s) { return s.p0(i); });
    v0[i] = col_of([&](const IntervalSample& s) { return s.zeta0(i); });
    w0[i] = col_of([&](const IntervalSample& s) { return s.zeta0(3 + i); });
  }
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      y0.r[3 * r + c] = col_of([&](const IntervalSample& s) { return s.R0(r, c); });
  y0.pm = momentum_from_velocity(t, pv, spec, y0.r, v0, w0);

  std::vector<Var> u;
  for (int j = 0; j < m; ++j)
    u.push_back(col_of([&](const IntervalSample& s) { return s.u(j); }));

  const SV y1 = rk4_rollout(t, pv, spec, y0, u, group[0]->dt, substeps);
  const std::array<Var, 6> zeta1 = velocity_from_momentum(t, pv, spec, y1);

  Var loss = t.constant(0.0);
  // Position error.
  for (int i = 0; i < 3; ++i) {
    const Var d = t.sub(y1.p[i], col_of([&](const IntervalSample& s) { return s.p1(i); }));
    loss = t.add(loss, t.sum_all(t.mul(d, d)));
  }
  // Velocity error.
  for (int i = 0; i < 6; ++i) {
    const Var d = t.sub(zeta1[i], col_of([&](const IntervalSample& s) { return s.zeta1(i); }));
    loss = t.add(loss, t.sum_all(t.mul(d, d)));
  }
  // Orientation error: squared geodesic angle of Rbar R^T.
  Var trc = t.constant(Eigen::MatrixXd::Zero(B, 1));
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      trc = t.add(trc, t.mul(y1.r[3 * r + c],
                             col_of([&](const IntervalSample& s) { return s.R1(r, c); })));
    }
  const Var cosang = t.scale(t.sub(trc, t.constant(1.0)), 0.5);
  const Var ang = t.acos_clamped(cosang, 1e-12);
  loss = t.add(loss, t.sum_all(t.mul(ang, ang)));
  return loss;
}

Var build_total_loss(Tape& t, const ParamVars& pv, const ModelSpec& spec,
                     const std::vector<IntervalSample>& samples, int substeps) {
  if (samples.empty()) throw std::invalid_argument("build_total_loss: empty batch");
  // Group by interval length so each group batches into one rollout.
  std::map<int64_t, std::vector<const IntervalSample*>> groups;
  for (const auto& s : samples) {
    groups[static_cast<int64_t>(std::llround(s.dt * 1e9))].push_back(&s);
  }
  Var loss = t.constant(0.0);
  for (const auto& [key, group] : groups) {
    loss = t.add(loss, build_group_loss(t, pv, spec, group, substeps));
  }
  return loss;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public learner surface

RolloutResult model_rollout(const ModelParams& params, const Vec3& p0, const Mat3& R0,
                            const Vec6& zeta0, const Eigen::VectorXd& u, double dt,
                            int substeps) {
  Tape t;
  const ParamVars pv = param_vars(t, params, /*leaf=*/false);
  SV y0;
  std::array<Var, 3> v0, w0;
  for (int i = 0; i < 3; ++i) {
    y0.p[i] = t.constant(p0(i));
    v0[i] = t.constant(zeta0(i));
    w0[i] = t.constant(zeta0(3 + i));
  }
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) y0.r[3 * r + c] = t.constant(R0(r, c));
  y0.pm = momentum_from_velocity(t, pv, params.spec, y0.r, v0, w0);
  std::vector<Var> uv;
  for (int j = 0; j < u.size(); ++j) uv.push_back(t.constant(u(j)));

  const SV y1 = (dt == 0.0) ? y0 : rk4_rollout(t, pv, params.spec, y0, uv, dt, substeps);
  const std::array<Var, 6> z1 = velocity_from_momentum(t, pv, params.spec, y1);

  RolloutResult out;
  for (int i = 0; i < 3; ++i) out.p(i) = t.value(y1.p[i])(0, 0);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out.R(r, c) = t.value(y1.r[3 * r + c])(0, 0);
  for (int i = 0; i < 6; ++i) out.zeta(i) = t.value(z1[i])(0, 0);
  return out;
}

double trajectory_loss(const RolloutResult& pred, const Vec3& p, const Mat3& R,
                       const Vec6& zeta) {
  const Mat3 Re = pred.R * R.transpose();
  const double ang = log_so3(project_to_so3(Re)).norm();
  return (pred.p - p).squaredNorm() + ang * ang + (pred.zeta - zeta).squaredNorm();
}

double batch_loss(const ModelParams& params, const std::vector<IntervalSample>& samples,
                  int substeps) {
  Tape t;
  const ParamVars pv = param_vars(t, params, /*leaf=*/false);
  const Var loss = build_total_loss(t, pv, params.spec, samples, substeps);
  return t.value(loss)(0, 0);
}

Eigen::VectorXd batch_loss_grad(const ModelParams& params,
                                const std::vector<IntervalSample>& samples, int substeps,
                                double* loss_out) {
  Tape t;
  t.reserve(1 << 16);
  const ParamVars pv = param_vars(t, params, /*leaf=*/true);
  const std::vector<Var> leaves = collect_param_vars(params, pv);
  const Var loss = build_total_loss(t, pv, params.spec, samples, substeps);
  if (loss_out) *loss_out = t.value(loss)(0, 0);
  const std::vector<Var> grads = t.gradient(loss, leaves);

  Eigen::VectorXd g(params.parameter_count());
  int k = 0;
  for (const Var& gv : grads) {
    const Eigen::MatrixXd& m = t.value(gv);
    g.segment(k, m.size()) = Eigen::Map<const Eigen::VectorXd>(m.data(), m.size());
    k += static_cast<int>(m.size());
  }
  return g;
}

TrainResult train(const Dataset& ds, const ModelSpec& spec, const TrainConfig& cfg) {
  const std::vector<IntervalSample> samples = interval_samples(ds);
  if (samples.empty()) throw std::invalid_argument("train: empty dataset");

  std::mt19937_64 rng(cfg.seed);
  ModelParams params = init_params(spec, rng);
  const int n = params.parameter_count();

  double lr = cfg.learning_rate;
  bool restarted = false;
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n), v = Eigen::VectorXd::Zero(n);
  Eigen::VectorXd theta = flatten(params);
  std::vector<double> curve;
  curve.reserve(cfg.iterations + 1);
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

  int it = 0;
  while (it < cfg.iterations) {
    double loss = 0.0;
    const Eigen::VectorXd g = batch_loss_grad(params, samples, cfg.substeps, &loss);
    if (!std::isfinite(loss) || !g.allFinite()) {
      if (restarted) throw std::runtime_error("train: non-finite loss after halving the rate");
      restarted = true;
      lr *= 0.5;
      std::mt19937_64 rng2(cfg.seed + 1);
      params = init_params(spec, rng2);
      theta = flatten(params);
      m.setZero();
      v.setZero();
      curve.clear();
      it = 0;
      continue;
    }
    curve.push_back(loss);
    ++it;
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g.cwiseProduct(g).eval();
    const double bc1 = 1.0 - std::pow(b1, it);
    const double bc2 = 1.0 - std::pow(b2, it);
    theta -= lr * ((m / bc1).array() / ((v / bc2).array().sqrt() + eps)).matrix();
    unflatten(theta, params);
  }
  curve.push_back(batch_loss(params, samples, cfg.substeps));

  return TrainResult{std::move(params), std::move(curve)};
}

// ---------------------------------------------------------------------------
// LearnedModel interface

Mat6 LearnedModel::mass_inverse(const Vec3&, const Mat3& R) const {
  Tape t;
  const ParamVars pv = param_vars(t, params_, false);
  std::array<Var, 9> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[3 * i + j] = t.constant(R(i, j));
  const MinvVars mv = build_minv(t, pv, params_.spec, r);
  Mat6 Minv = Mat6::Zero();
  Minv.topLeftCorner<3, 3>() = t.value(mv.minv)(0, 0) * Mat3::Identity();
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) Minv(3 + i, 3 + j) = t.value(mv.jinv[3 * i + j])(0, 0);
  return Minv;
}

double LearnedModel::potential(const Vec3& p, const Mat3& R) const {
  Tape t;
  const ParamVars pv = param_vars(t, params_, false);
  std::array<Var, 3> pc;
  std::array<Var, 9> r;
  for (int i = 0; i < 3; ++i) pc[i] = t.constant(p(i));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[3 * i + j] = t.constant(R(i, j));
  return t.value(build_potential(t, pv, params_.spec, pc, r))(0, 0);
}

Vec12 LearnedModel::hamiltonian_q_grad(const Vec3& p, const Mat3& R, const Vec6& pm) const {
  Tape t;
  const ParamVars pv = param_vars(t, params_, false);
  SV sv;
  for (int i = 0; i < 3; ++i) sv.p[i] = t.constant(p(i));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) sv.r[3 * i + j] = t.constant(R(i, j));
  for (int i = 0; i < 6; ++i) sv.pm[i] = t.constant(pm(i));
  const MinvVars mv = build_minv(t, pv, params_.spec, sv.r);
  const Var H = build_hamiltonian(t, pv, params_.spec, sv, mv);
  std::array<Var, 12> q;
  for (int i = 0; i < 3; ++i) q[i] = sv.p[i];
  for (int i = 0; i < 9; ++i) q[3 + i] = sv.r[i];
  const std::vector<Var> g = t.gradient(t.sum_all(H), std::span<const Var>(q.data(), 12));
  Vec12 out;
  for (int i = 0; i < 12; ++i) out(i) = t.value(g[i])(0, 0);
  return out;
}

Eigen::MatrixXd LearnedModel::input_gain(const Vec3&, const Mat3& R) const {
  if (params_.spec.cls != ModelClass::Uav3d) return Eigen::MatrixXd::Identity(6, 6);
  Tape t;
  const ParamVars pv = param_vars(t, params_, false);
  std::array<Var, 9> r;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) r[3 * i + j] = t.constant(R(i, j));
  const std::vector<Var> ent = build_input_gain(t, pv, params_.spec, r);
  const int m = params_.spec.input_dim;
  Eigen::MatrixXd B(6, m);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < m; ++j) B(i, j) = t.value(ent[i * m + j])(0, 0);
  return B;
}

Mat6 LearnedModel::mass(const Vec3& p, const Mat3& R) const {
  return mass_inverse(p, R).inverse();
}

// ---------------------------------------------------------------------------
// Disturbance bound

double estimate_disturbance_bound(const LearnedModel& model, const Dataset& heldout,
                                  int substeps, std::vector<double>* per_sample) {
  const std::vector<IntervalSample> samples = interval_samples(heldout);
  if (samples.size() < 10) {
    throw InsufficientData("estimate_disturbance_bound: fewer than 10 samples");
  }
  std::vector<double> norms;
  norms.reserve(samples.size());
  for (const auto& s : samples) {
    State x0{s.p0, s.R0, model.mass(s.p0, s.R0) * s.zeta0};
    const State x1 = step(x0, s.u, Vec6::Zero(), s.dt, model, substeps);
    const Vec6 pm_obs = model.mass(s.p1, s.R1) * s.zeta1;
    norms.push_back(((pm_obs - x1.pm) / s.dt).norm());
  }
  if (per_sample) *per_sample = norms;
  std::sort(norms.begin(), norms.end());
  const size_t idx = std::min(norms.size() - 1,
                              static_cast<size_t>(std::ceil(0.99 * norms.size())) - 1);
  return norms[idx];
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

json mlp_to_json(const Mlp& m) {
  json layers = json::array();
  for (size_t l = 0; l < m.W.size(); ++l) {
    json W = json::array();
    for (int i = 0; i < m.W[l].size(); ++i) W.push_back(m.W[l].data()[i]);
    json b = json::array();
    for (int i = 0; i < m.b[l].size(); ++i) b.push_back(m.b[l](i));
    layers.push_back({{"rows", m.W[l].rows()}, {"cols", m.W[l].cols()}, {"W", W}, {"b", b}});
  }
  return layers;
}

Mlp mlp_from_json(const json& layers) {
  Mlp m;
  for (const auto& l : layers) {
    Eigen::MatrixXd W(l.at("rows").get<int>(), l.at("cols").get<int>());
    const auto& wj = l.at("W");
    for (int i = 0; i < W.size(); ++i) W.data()[i] = wj.at(i);
    Eigen::RowVectorXd b(l.at("b").size());
    for (int i = 0; i < b.size(); ++i) b(i) = l.at("b").at(i);
    m.W.push_back(std::move(W));
    m.b.push_back(std::move(b));
  }
  return m;
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path,
                     const std::string& dataset_hash_hex, const std::string& note) {
  const ModelSpec& s = params.spec;
  json spec{{"class", s.cls == ModelClass::Uav3d ? "uav3d" : "planar"},
            {"input_dim", s.input_dim},
            {"hidden", s.hidden},
            {"spd_eps", s.spd_eps},
            {"known_mass", s.known_mass},
            {"gravity", s.gravity},
            {"mass_prior", s.mass_prior},
            {"inertia_yy_prior", s.inertia_yy_prior},
            {"inertia_xx_known", s.inertia_xx_known},
            {"inertia_zz_known", s.inertia_zz_known},
            {"learn_potential", s.learn_potential}};
  json weights;
  if (s.cls == ModelClass::Uav3d) {
    weights["lj"] = mlp_to_json(params.lj);
    weights["bnet"] = mlp_to_json(params.bnet);
  } else {
    weights["l1"] = mlp_to_json(params.l1);
    weights["l2"] = mlp_to_json(params.l2);
    if (s.learn_potential) {
      weights["umlp"] = mlp_to_json(params.umlp);
      weights["uw"] = {params.uw(0), params.uw(1), params.uw(2)};
    }
  }
  json j{{"format", "hamsafe-model-v1"},
         {"spec", spec},
         {"weights", weights},
         {"meta",
          {{"dataset_hash", dataset_hash_hex},
           {"note", note},
           {"parameter_count", params.parameter_count()}}}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_checkpoint: cannot open " + path);
  out << j.dump(2) << "\n";
}

ModelParams load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_checkpoint: cannot open " + path);
  json j;
  in >> j;
  ModelParams p;
  const json& s = j.at("spec");
  p.spec.cls = s.at("class") == "uav3d" ? ModelClass::Uav3d : ModelClass::Planar;
  p.spec.input_dim = s.at("input_dim");
  p.spec.hidden = s.at("hidden").get<std::vector<int>>();
  p.spec.spd_eps = s.at("spd_eps");
  p.spec.known_mass = s.at("known_mass");
  p.spec.gravity = s.at("gravity");
  p.spec.mass_prior = s.at("mass_prior");
  p.spec.inertia_yy_prior = s.at("inertia_yy_prior");
  p.spec.inertia_xx_known = s.at("inertia_xx_known");
  p.spec.inertia_zz_known = s.at("inertia_zz_known");
  p.spec.learn_potential = s.at("learn_potential");
  const json& w = j.at("weights");
  if (p.spec.cls == ModelClass::Uav3d) {
    p.lj = mlp_from_json(w.at("lj"));
    p.bnet = mlp_from_json(w.at("bnet"));
  } else {
    p.l1 = mlp_from_json(w.at("l1"));
    p.l2 = mlp_from_json(w.at("l2"));
    if (p.spec.learn_potential) {
      p.umlp = mlp_from_json(w.at("umlp"));
      p.uw = Vec3(w.at("uw").at(0), w.at("uw").at(1), w.at("uw").at(2));
    }
  }
  return p;
}

}  // namespace hamsafe
