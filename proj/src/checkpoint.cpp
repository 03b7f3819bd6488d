#include "ngfn/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace ngfn {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }

struct Cursor {
  const std::string& buf;
  size_t pos = 0;

  void need(size_t n) const {
    if (pos + n > buf.size()) throw IoError("checkpoint: truncated file");
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[pos + i])) << (8 * i);
    pos += 8;
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::vector<double> vec_data(const Vec& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

Vec data_vec(const std::vector<double>& d) {
  Vec v(static_cast<long>(d.size()));
  std::memcpy(v.data(), d.data(), d.size() * sizeof(double));
  return v;
}

std::uint64_t numel(const NamedArray& a) {
  std::uint64_t n = 1;
  for (std::uint64_t d : a.shape) n *= d;
  return n;
}

NamedArray spec_array(const std::string& prefix, const Mlp& net) {
  const MlpSpec& s = net.spec();
  return {prefix + ".spec",
          {7},
          {static_cast<double>(s.in_dim), static_cast<double>(s.out_dim),
           static_cast<double>(s.hidden), static_cast<double>(s.depth),
           static_cast<double>(s.time_features), s.final_scale,
           static_cast<double>(net.time_scale())}};
}

NamedArray flat_array(const std::string& prefix, const Mlp& net) {
  return {prefix + ".flat", {static_cast<std::uint64_t>(net.n_params())}, vec_data(net.flat())};
}

Mlp unpack_net(const Checkpoint& ckpt, const std::string& prefix) {
  const NamedArray& sa = ckpt.need(prefix + ".spec");
  if (sa.data.size() != 7) throw IoError("checkpoint: malformed spec array " + sa.name);
  MlpSpec spec;
  spec.in_dim = static_cast<int>(sa.data[0]);
  spec.out_dim = static_cast<int>(sa.data[1]);
  spec.hidden = static_cast<int>(sa.data[2]);
  spec.depth = static_cast<int>(sa.data[3]);
  spec.time_features = static_cast<int>(sa.data[4]);
  spec.final_scale = sa.data[5];
  Rng scratch(0);
  Mlp net(spec, static_cast<int>(sa.data[6]), scratch);
  const NamedArray& fa = ckpt.need(prefix + ".flat");
  if (fa.data.size() != static_cast<size_t>(net.n_params())) {
    throw IoError("checkpoint: parameter count mismatch for " + prefix);
  }
  net.flat() = data_vec(fa.data);
  return net;
}

void pack_adam(Checkpoint& ckpt, const std::string& prefix, const Adam& opt) {
  ckpt.arrays.push_back({prefix + ".m", {static_cast<std::uint64_t>(opt.m().size())}, vec_data(opt.m())});
  ckpt.arrays.push_back({prefix + ".v", {static_cast<std::uint64_t>(opt.v().size())}, vec_data(opt.v())});
  ckpt.arrays.push_back({prefix + ".steps", {1}, {static_cast<double>(opt.steps())}});
}

Adam unpack_adam(const Checkpoint& ckpt, const std::string& prefix, double lr, int n_params) {
  Adam opt(lr);
  opt.init(n_params);
  const NamedArray& m = ckpt.need(prefix + ".m");
  const NamedArray& v = ckpt.need(prefix + ".v");
  if (m.data.size() != static_cast<size_t>(n_params) ||
      v.data.size() != static_cast<size_t>(n_params)) {
    throw IoError("checkpoint: optimizer moment size mismatch for " + prefix);
  }
  opt.m() = data_vec(m.data);
  opt.v() = data_vec(v.data);
  opt.steps() = static_cast<long>(ckpt.need(prefix + ".steps").data.at(0));
  return opt;
}

void pack_schedule(Checkpoint& ckpt, const NoiseSchedule& schedule) {
  ckpt.arrays.push_back({"schedule.alpha_bar",
                         {static_cast<std::uint64_t>(schedule.alpha_bar.size())},
                         schedule.alpha_bar});
  ckpt.arrays.push_back(
      {"schedule.sigma", {static_cast<std::uint64_t>(schedule.sigma.size())}, schedule.sigma});
}

NoiseSchedule unpack_schedule(const Checkpoint& ckpt) {
  NoiseSchedule s;
  s.alpha_bar = ckpt.need("schedule.alpha_bar").data;
  s.sigma = ckpt.need("schedule.sigma").data;
  if (s.alpha_bar.size() != s.sigma.size() + 1 || s.sigma.empty()) {
    throw IoError("checkpoint: inconsistent schedule arrays");
  }
  s.T = static_cast<int>(s.sigma.size());
  return s;
}

}  // namespace

const NamedArray* Checkpoint::find(const std::string& name) const {
  for (const NamedArray& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const NamedArray& Checkpoint::need(const std::string& name) const {
  const NamedArray* a = find(name);
  if (!a) throw IoError("checkpoint: missing array '" + name + "'");
  return *a;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  std::string out;
  out += "NGFN";
  put_u32(out, ckpt.version);
  put_u32(out, ckpt.kind);
  put_u64(out, ckpt.config_hash);
  put_u64(out, static_cast<std::uint64_t>(ckpt.epoch));
  put_u64(out, static_cast<std::uint64_t>(ckpt.updates));
  put_u32(out, static_cast<std::uint32_t>(ckpt.arrays.size()));
  for (const NamedArray& a : ckpt.arrays) {
    put_u32(out, static_cast<std::uint32_t>(a.name.size()));
    out += a.name;
    put_u32(out, static_cast<std::uint32_t>(a.shape.size()));
    for (std::uint64_t d : a.shape) put_u64(out, d);
    if (numel(a) != a.data.size()) throw IoError("checkpoint: shape/data mismatch in " + a.name);
    for (double v : a.data) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("checkpoint: write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("checkpoint: cannot open '" + path + "'");
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  Cursor c{buf};
  if (c.bytes(4) != "NGFN") throw IoError("checkpoint: bad magic in '" + path + "'");
  Checkpoint ckpt;
  ckpt.version = c.u32();
  if (ckpt.version != 1) throw IoError("checkpoint: unsupported version");
  ckpt.kind = c.u32();
  if (ckpt.kind != kCkptPretrain && ckpt.kind != kCkptFinetune) {
    throw IoError("checkpoint: unknown kind");
  }
  ckpt.config_hash = c.u64();
  ckpt.epoch = static_cast<long>(c.u64());
  ckpt.updates = static_cast<long>(c.u64());
  const std::uint32_t n_arrays = c.u32();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    NamedArray a;
    a.name = c.bytes(c.u32());
    const std::uint32_t rank = c.u32();
    if (rank > 8) throw IoError("checkpoint: absurd array rank");
    std::uint64_t n = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      a.shape.push_back(c.u64());
      n *= a.shape.back();
    }
    if (n > (1ULL << 30)) throw IoError("checkpoint: absurd array size");
    a.data.resize(n);
    for (std::uint64_t j = 0; j < n; ++j) a.data[j] = c.f64();
    ckpt.arrays.push_back(std::move(a));
  }
  if (c.pos != buf.size()) throw IoError("checkpoint: trailing bytes in '" + path + "'");
  return ckpt;
}

Checkpoint pack_pretrain(const Mlp& net, const NoiseSchedule& schedule,
                         std::uint64_t config_hash) {
  Checkpoint ckpt;
  ckpt.kind = kCkptPretrain;
  ckpt.config_hash = config_hash;
  pack_schedule(ckpt, schedule);
  ckpt.arrays.push_back(spec_array("net", net));
  ckpt.arrays.push_back(flat_array("net", net));
  return ckpt;
}

void unpack_pretrain(const Checkpoint& ckpt, Mlp& net, NoiseSchedule& schedule) {
  if (ckpt.kind != kCkptPretrain) throw IoError("checkpoint: not a pretrained-model checkpoint");
  schedule = unpack_schedule(ckpt);
  net = unpack_net(ckpt, "net");
}

Checkpoint pack_finetune(const FinetuneState& state, const NoiseSchedule& schedule,
                         std::uint64_t config_hash) {
  Checkpoint ckpt;
  ckpt.kind = kCkptFinetune;
  ckpt.config_hash = config_hash;
  ckpt.epoch = state.epoch;
  ckpt.updates = state.updates;
  pack_schedule(ckpt, schedule);
  const std::pair<const char*, const Mlp*> nets[] = {{"policy", &state.policy},
                                                     {"prev_policy", &state.prev_policy},
                                                     {"pretrained", &state.pretrained},
                                                     {"g_phi", &state.g_phi}};
  for (const auto& [prefix, net] : nets) {
    ckpt.arrays.push_back(spec_array(prefix, *net));
    ckpt.arrays.push_back(flat_array(prefix, *net));
  }
  pack_adam(ckpt, "opt_policy", state.opt_policy);
  pack_adam(ckpt, "opt_flow", state.opt_flow);
  if (state.correction.n_params() > 0) {
    ckpt.arrays.push_back(spec_array("correction", state.correction));
    ckpt.arrays.push_back(flat_array("correction", state.correction));
    pack_adam(ckpt, "opt_correction", state.opt_correction);
  }

  const std::uint64_t n = state.prev_batch.size();
  const std::uint64_t len = n ? state.prev_batch.front().states.size() : 0;
  const std::uint64_t dim = n ? static_cast<std::uint64_t>(state.prev_batch.front().states.front().size()) : 0;
  NamedArray states{"prev_batch.states", {n, len, dim}, {}};
  NamedArray seeds{"prev_batch.seeds", {n}, {}};
  for (const Trajectory& traj : state.prev_batch) {
    for (const Vec& x : traj.states) {
      for (int j = 0; j < x.size(); ++j) states.data.push_back(x(j));
    }
    // raw bit pattern; the format stores doubles bitwise so this is lossless
    seeds.data.push_back(std::bit_cast<double>(traj.seed));
  }
  ckpt.arrays.push_back(std::move(states));
  ckpt.arrays.push_back(std::move(seeds));
  return ckpt;
}

FinetuneState unpack_finetune(const Checkpoint& ckpt, const FinetuneConfig& cfg,
                              NoiseSchedule& schedule) {
  if (ckpt.kind != kCkptFinetune) throw IoError("checkpoint: not a finetune checkpoint");
  schedule = unpack_schedule(ckpt);
  FinetuneState state;
  state.policy = unpack_net(ckpt, "policy");
  state.prev_policy = unpack_net(ckpt, "prev_policy");
  state.pretrained = unpack_net(ckpt, "pretrained");
  state.g_phi = unpack_net(ckpt, "g_phi");
  state.opt_policy = unpack_adam(ckpt, "opt_policy", cfg.lr_policy, state.policy.n_params());
  state.opt_flow = unpack_adam(ckpt, "opt_flow", cfg.lr_flow, state.g_phi.n_params());
  const bool has_correction = ckpt.find("correction.spec") != nullptr;
  if (has_correction != cfg.weights.use_correction) {
    throw IoError("checkpoint: correction head presence disagrees with the config");
  }
  if (has_correction) {
    state.correction = unpack_net(ckpt, "correction");
    state.opt_correction =
        unpack_adam(ckpt, "opt_correction", cfg.lr_flow, state.correction.n_params());
  }
  state.epoch = ckpt.epoch;
  state.updates = ckpt.updates;

  const NamedArray& states = ckpt.need("prev_batch.states");
  const NamedArray& seeds = ckpt.need("prev_batch.seeds");
  if (states.shape.size() != 3 || seeds.shape.size() != 1 || states.shape[0] != seeds.shape[0]) {
    throw IoError("checkpoint: malformed trajectory buffer");
  }
  const std::uint64_t n = states.shape[0];
  const std::uint64_t len = states.shape[1];
  const std::uint64_t dim = states.shape[2];
  size_t off = 0;
  for (std::uint64_t i = 0; i < n; ++i) {
    Trajectory traj;
    traj.seed = std::bit_cast<std::uint64_t>(seeds.data[i]);
    for (std::uint64_t k = 0; k < len; ++k) {
      Vec x(static_cast<long>(dim));
      for (std::uint64_t j = 0; j < dim; ++j) x(static_cast<long>(j)) = states.data[off++];
      traj.states.push_back(std::move(x));
    }
    state.prev_batch.push_back(std::move(traj));
  }
  return state;
}

}  // namespace ngfn
