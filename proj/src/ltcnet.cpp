#include "odefit/ltcnet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace odefit::net {

namespace {

constexpr char kMagic[8] = {'O', 'D', 'F', 'C', 'K', 'P', 'T', '1'};

void fill_uniform(std::span<double> dst, double half_width, Rng& rng) {
  for (double& v : dst) v = rng.uniform(-half_width, half_width);
}

}  // namespace

LtcModel init_model(int n_param, int n_calib, Rng& rng) {
  LtcModel m;
  m.n_param = n_param;
  m.n_calib = n_calib;
  m.w.assign(m.weight_count(), 0.0);

  const int h = m.hidden;
  const double cell_hw = 1.0 / std::sqrt(static_cast<double>(h + m.input));
  const double head_hw = 1.0 / std::sqrt(static_cast<double>(h));

  fill_uniform({m.w.data() + m.off_w_rec(), static_cast<std::size_t>(h) * h}, cell_hw, rng);
  fill_uniform({m.w.data() + m.off_w_in(), static_cast<std::size_t>(h) * m.input}, cell_hw, rng);
  fill_uniform({m.w.data() + m.off_bias(), static_cast<std::size_t>(h)}, cell_hw, rng);
  fill_uniform({m.w.data() + m.off_gain(), static_cast<std::size_t>(h)}, 1.0, rng);
  for (int i = 0; i < h; ++i)
    m.w[m.off_log_tau() + static_cast<std::size_t>(i)] = std::log(rng.uniform(0.5, 2.0));
  fill_uniform({m.w.data() + m.off_w_param(), static_cast<std::size_t>(n_param) * h}, head_hw, rng);
  fill_uniform({m.w.data() + m.off_b_param(), static_cast<std::size_t>(n_param)}, head_hw, rng);
  fill_uniform({m.w.data() + m.off_w_calib(), static_cast<std::size_t>(n_calib) * h}, head_hw, rng);
  // calibration biases start at zero; trainers seed them with config priors
  return m;
}

// --- checkpoint io -----------------------------------------------------------

namespace {

template <class T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::ifstream& f) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

void put_array(std::ofstream& f, const std::string& name, const double* data, std::uint64_t n) {
  const std::uint32_t len = static_cast<std::uint32_t>(name.size());
  put(f, len);
  f.write(name.data(), len);
  put(f, n);
  f.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n * sizeof(double)));
}

}  // namespace

void save_checkpoint(const std::string& path, const LtcModel& m, std::uint64_t seed, int epoch) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
  f.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(f, 1);  // version
  put<std::uint64_t>(f, seed);
  put<std::int32_t>(f, epoch);
  put<std::int32_t>(f, m.hidden);
  put<std::int32_t>(f, m.input);
  put<std::int32_t>(f, m.n_param);
  put<std::int32_t>(f, m.n_calib);
  put<double>(f, m.dropout_p);

  const struct {
    const char* name;
    std::size_t off;
    std::size_t count;
  } sections[] = {
      {"w_rec", m.off_w_rec(), static_cast<std::size_t>(m.hidden) * m.hidden},
      {"w_in", m.off_w_in(), static_cast<std::size_t>(m.hidden) * m.input},
      {"bias", m.off_bias(), static_cast<std::size_t>(m.hidden)},
      {"drive_gain", m.off_gain(), static_cast<std::size_t>(m.hidden)},
      {"log_tau", m.off_log_tau(), static_cast<std::size_t>(m.hidden)},
      {"w_param", m.off_w_param(), static_cast<std::size_t>(m.n_param) * m.hidden},
      {"b_param", m.off_b_param(), static_cast<std::size_t>(m.n_param)},
      {"w_calib", m.off_w_calib(), static_cast<std::size_t>(m.n_calib) * m.hidden},
      {"b_calib", m.off_b_calib(), static_cast<std::size_t>(m.n_calib)},
  };
  put<std::uint32_t>(f, static_cast<std::uint32_t>(std::size(sections)));
  for (const auto& s : sections) put_array(f, s.name, m.w.data() + s.off, s.count);
  if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

LtcModel load_checkpoint(const std::string& path, std::uint64_t* seed_out, int* epoch_out) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[sizeof(kMagic)];
  f.read(magic, sizeof(magic));
  if (!f || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const auto version = get<std::uint32_t>(f);
  if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
  const auto seed = get<std::uint64_t>(f);
  const auto epoch = get<std::int32_t>(f);

  LtcModel m;
  m.hidden = get<std::int32_t>(f);
  m.input = get<std::int32_t>(f);
  m.n_param = get<std::int32_t>(f);
  m.n_calib = get<std::int32_t>(f);
  m.dropout_p = get<double>(f);
  m.w.assign(m.weight_count(), 0.0);

  const auto n_sections = get<std::uint32_t>(f);
  std::size_t written = 0;
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    const auto len = get<std::uint32_t>(f);
    std::string name(len, '\0');
    f.read(name.data(), len);
    const auto count = get<std::uint64_t>(f);
    if (written + count > m.w.size()) throw std::runtime_error("checkpoint: section overflow");
    f.read(reinterpret_cast<char*>(m.w.data() + written),
           static_cast<std::streamsize>(count * sizeof(double)));
    if (!f) throw std::runtime_error("checkpoint: truncated section " + name);
    written += count;
  }
  if (written != m.w.size()) throw std::runtime_error("checkpoint: incomplete weights");
  if (seed_out) *seed_out = seed;
  if (epoch_out) *epoch_out = epoch;
  return m;
}

// --- tape forward -----------------------------------------------------------

TapedModel stage(ad::Tape& tape, const LtcModel& model) {
  if (tape.size() != 0)
    throw std::logic_error("stage: model must be staged on a fresh tape");
  TapedModel tm;
  tm.model = &model;
  tm.w.reserve(model.w.size());
  for (double v : model.w) tm.w.push_back(tape.leaf(v));
  tm.inv_tau.reserve(static_cast<std::size_t>(model.hidden));
  for (int i = 0; i < model.hidden; ++i)
    tm.inv_tau.push_back(ad::exp(-tm.w[model.off_log_tau() + static_cast<std::size_t>(i)]));
  return tm;
}

std::vector<ad::Value> ltc_unfold(ad::Tape& tape, const TapedModel& tm,
                                  std::span<const ad::Value> h,
                                  std::span<const double> x_in, double dt_cell) {
  const LtcModel& m = *tm.model;
  if (static_cast<int>(h.size()) != m.hidden) throw std::invalid_argument("ltc_unfold: bad hidden size");
  if (static_cast<int>(x_in.size()) != m.input) throw std::invalid_argument("ltc_unfold: bad input size");
  if (!(dt_cell > 0.0)) throw std::invalid_argument("ltc_unfold: dt_cell must be positive");

  std::vector<ad::Value> cur(h.begin(), h.end());
  std::vector<ad::Value> nxt(static_cast<std::size_t>(m.hidden));
  for (int s = 0; s < kOdeUnfolds; ++s) {
    for (int i = 0; i < m.hidden; ++i) {
      const std::size_t ii = static_cast<std::size_t>(i);
      const ad::Value z = tape.dot_mixed(tm.w_rec_row(i), cur, tm.w_in_row(i), x_in,
                                         tm.w[m.off_bias() + ii]);
      // tanh drive mapped to a positive gate, keeps the fused update a
      // convex combination and the hidden state bounded
      const ad::Value f = 0.5 * (ad::tanh(z) + 1.0);
      const ad::Value drive = cur[ii] + (dt_cell * tm.w[m.off_gain() + ii]) * f;
      const ad::Value denom = 1.0 + dt_cell * (tm.inv_tau[ii] + f) + kFusedEps;
      nxt[ii] = drive / denom;
      if (!std::isfinite(nxt[ii].value()))
        throw std::runtime_error("ltc_unfold: non-finite hidden state at unit " + std::to_string(i));
    }
    cur.swap(nxt);
  }
  return cur;
}

Readout readout(ad::Tape& tape, const TapedModel& tm,
                std::span<const ad::Value> hidden_seq, int timesteps,
                std::span<const std::uint8_t> dropout, double dropout_p) {
  const LtcModel& m = *tm.model;
  if (timesteps <= 0) throw std::invalid_argument("readout: empty hidden sequence");
  const std::size_t hd = static_cast<std::size_t>(m.hidden);
  if (hidden_seq.size() != static_cast<std::size_t>(timesteps) * hd)
    throw std::invalid_argument("readout: hidden sequence size mismatch");
  const bool use_dropout = !dropout.empty();
  if (use_dropout && dropout.size() != hidden_seq.size())
    throw std::invalid_argument("readout: dropout mask size mismatch");
  const double keep_scale = 1.0 / (1.0 - dropout_p);

  Readout out;
  out.theta_bar.assign(static_cast<std::size_t>(m.n_param), ad::Value(0.0));
  out.calib.assign(static_cast<std::size_t>(m.n_calib), ad::Value(0.0));

  std::vector<ad::Value> hdrop(hd);
  const double inv_t = 1.0 / static_cast<double>(timesteps);
  for (int t = 0; t < timesteps; ++t) {
    const std::size_t base = static_cast<std::size_t>(t) * hd;
    for (std::size_t i = 0; i < hd; ++i) {
      if (use_dropout)
        hdrop[i] = dropout[base + i] ? hidden_seq[base + i] * keep_scale : ad::Value(0.0);
      else
        hdrop[i] = hidden_seq[base + i];
    }
    for (int k = 0; k < m.n_param; ++k) {
      std::span<const ad::Value> row(tm.w.data() + m.off_w_param() + static_cast<std::size_t>(k) * hd, hd);
      const ad::Value z = tape.dot_mixed(row, hdrop, {}, {}, tm.w[m.off_b_param() + static_cast<std::size_t>(k)]);
      out.theta_bar[static_cast<std::size_t>(k)] += inv_t * ad::sigmoid(z);
    }
    for (int c = 0; c < m.n_calib; ++c) {
      std::span<const ad::Value> row(tm.w.data() + m.off_w_calib() + static_cast<std::size_t>(c) * hd, hd);
      const ad::Value z = tape.dot_mixed(row, hdrop, {}, {}, tm.w[m.off_b_calib() + static_cast<std::size_t>(c)]);
      out.calib[static_cast<std::size_t>(c)] += inv_t * ad::relu(z);
    }
  }
  return out;
}

std::vector<ad::Value> denormalize(std::span<const ad::Value> theta_bar,
                                   std::span<const double> nominal) {
  if (theta_bar.size() != nominal.size())
    throw std::invalid_argument("denormalize: size mismatch");
  std::vector<ad::Value> out;
  out.reserve(theta_bar.size());
  for (std::size_t k = 0; k < theta_bar.size(); ++k)
    out.push_back((1.0 + (0.5 - theta_bar[k]) * kDenormSpan) * nominal[k]);
  return out;
}

// --- plain double forward ----------------------------------------------------

void ltc_unfold_d(const LtcModel& m, std::span<const double> w, std::span<double> h,
                  std::span<const double> x_in, double dt_cell) {
  const std::size_t hd = static_cast<std::size_t>(m.hidden);
  std::vector<double> nxt(hd);
  for (int s = 0; s < kOdeUnfolds; ++s) {
    for (std::size_t i = 0; i < hd; ++i) {
      const double* wr = w.data() + m.off_w_rec() + i * hd;
      const double* wi = w.data() + m.off_w_in() + i * static_cast<std::size_t>(m.input);
      double z = w[m.off_bias() + i];
      for (std::size_t j = 0; j < hd; ++j) z += wr[j] * h[j];
      for (int j = 0; j < m.input; ++j) z += wi[j] * x_in[static_cast<std::size_t>(j)];
      const double f = 0.5 * (std::tanh(z) + 1.0);
      const double inv_tau = std::exp(-w[m.off_log_tau() + i]);
      nxt[i] = (h[i] + dt_cell * w[m.off_gain() + i] * f) /
               (1.0 + dt_cell * (inv_tau + f) + kFusedEps);
    }
    for (std::size_t i = 0; i < hd; ++i) h[i] = nxt[i];
  }
}

ReadoutD readout_d(const LtcModel& m, std::span<const double> w,
                   std::span<const double> hidden_seq, int timesteps) {
  const std::size_t hd = static_cast<std::size_t>(m.hidden);
  ReadoutD out;
  out.theta_bar.assign(static_cast<std::size_t>(m.n_param), 0.0);
  out.calib.assign(static_cast<std::size_t>(m.n_calib), 0.0);
  const double inv_t = 1.0 / static_cast<double>(timesteps);
  for (int t = 0; t < timesteps; ++t) {
    const double* h = hidden_seq.data() + static_cast<std::size_t>(t) * hd;
    for (int k = 0; k < m.n_param; ++k) {
      const double* row = w.data() + m.off_w_param() + static_cast<std::size_t>(k) * hd;
      double z = w[m.off_b_param() + static_cast<std::size_t>(k)];
      for (std::size_t j = 0; j < hd; ++j) z += row[j] * h[j];
      out.theta_bar[static_cast<std::size_t>(k)] += inv_t / (1.0 + std::exp(-z));
    }
    for (int c = 0; c < m.n_calib; ++c) {
      const double* row = w.data() + m.off_w_calib() + static_cast<std::size_t>(c) * hd;
      double z = w[m.off_b_calib() + static_cast<std::size_t>(c)];
      for (std::size_t j = 0; j < hd; ++j) z += row[j] * h[j];
      out.calib[static_cast<std::size_t>(c)] += inv_t * (z > 0.0 ? z : 0.0);
    }
  }
  return out;
}

}  // namespace odefit::net
