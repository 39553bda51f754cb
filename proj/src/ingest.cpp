#include "odefit/ingest.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace odefit::ingest {

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

// Linear interpolation of a multi-channel series at time t, clamped to the
// endpoints outside the sampled range.
void interp_series(std::span<const double> ts, std::span<const double> values, int width,
                   double t, std::span<double> out) {
  const std::size_t n = ts.size();
  const std::size_t w = static_cast<std::size_t>(width);
  if (t <= ts.front()) {
    for (std::size_t c = 0; c < w; ++c) out[c] = values[c];
    return;
  }
  if (t >= ts.back()) {
    for (std::size_t c = 0; c < w; ++c) out[c] = values[(n - 1) * w + c];
    return;
  }
  const auto it = std::upper_bound(ts.begin(), ts.end(), t);
  const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
  const std::size_t lo = hi - 1;
  const double f = (t - ts[lo]) / (ts[hi] - ts[lo]);
  for (std::size_t c = 0; c < w; ++c)
    out[c] = (1.0 - f) * values[lo * w + c] + f * values[hi * w + c];
}

}  // namespace

// --- trajectory CSV -----------------------------------------------------------

sim::Trajectory read_csv_trajectory(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open " + path);

  std::string line;
  if (!std::getline(f, line)) throw DataError(path + ": empty file");
  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "t")
    throw DataError(path + ": header must start with 't'");

  int state_dim = 0, forcing_dim = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    const std::string expect_x = "x" + std::to_string(state_dim + 1);
    const std::string expect_u = "u" + std::to_string(forcing_dim + 1);
    if (forcing_dim == 0 && header[i] == expect_x) {
      ++state_dim;
    } else if (header[i] == expect_u) {
      ++forcing_dim;
    } else {
      throw DataError(path + ": unexpected column '" + header[i] + "'");
    }
  }
  if (state_dim == 0) throw DataError(path + ": no state columns");

  sim::Trajectory tr;
  tr.state_dim = state_dim;
  tr.forcing_dim = forcing_dim;
  int line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size())
      throw DataError(path + ": row " + std::to_string(line_no) + " has " +
                      std::to_string(cells.size()) + " cells, expected " +
                      std::to_string(header.size()));
    std::vector<double> row(cells.size());
    for (std::size_t i = 0; i < cells.size(); ++i)
      if (!parse_double(cells[i], row[i]))
        throw DataError(path + ": row " + std::to_string(line_no) + ": non-numeric cell '" +
                        cells[i] + "'");
    if (!tr.timestamps.empty() && row[0] <= tr.timestamps.back())
      throw DataError(path + ": row " + std::to_string(line_no) +
                      ": timestamps must be strictly increasing");
    tr.timestamps.push_back(row[0]);
    for (int i = 0; i < state_dim; ++i) tr.states.push_back(row[static_cast<std::size_t>(1 + i)]);
    for (int i = 0; i < forcing_dim; ++i)
      tr.forcing.push_back(row[static_cast<std::size_t>(1 + state_dim + i)]);
  }
  if (tr.timestamps.empty()) throw DataError(path + ": no data rows");
  if (tr.timestamps.size() >= 2) tr.fps = 1.0 / (tr.timestamps[1] - tr.timestamps[0]);
  return tr;
}

void write_csv_trajectory(const std::string& path, const sim::Trajectory& tr) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open " + path + " for writing");
  f << "t";
  for (int i = 1; i <= tr.state_dim; ++i) f << ",x" << i;
  for (int i = 1; i <= tr.forcing_dim; ++i) f << ",u" << i;
  f << "\n";
  char buf[32];
  auto put = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    f << buf;
  };
  for (std::size_t k = 0; k < tr.samples(); ++k) {
    put(tr.timestamps[k]);
    for (int i = 0; i < tr.state_dim; ++i) {
      f << ",";
      put(tr.states[k * static_cast<std::size_t>(tr.state_dim) + static_cast<std::size_t>(i)]);
    }
    for (int i = 0; i < tr.forcing_dim; ++i) {
      f << ",";
      put(tr.forcing[k * static_cast<std::size_t>(tr.forcing_dim) + static_cast<std::size_t>(i)]);
    }
    f << "\n";
  }
  if (!f) throw DataError("write failed for " + path);
}

// --- tracked-pixel stages -------------------------------------------------------

namespace {

using Mat4 = std::array<double, 16>;
using Vec4 = std::array<double, 4>;

Mat4 mat_mul(const Mat4& a, const Mat4& b) {
  Mat4 c{};
  for (int i = 0; i < 4; ++i)
    for (int k = 0; k < 4; ++k) {
      const double aik = a[static_cast<std::size_t>(i * 4 + k)];
      for (int j = 0; j < 4; ++j)
        c[static_cast<std::size_t>(i * 4 + j)] += aik * b[static_cast<std::size_t>(k * 4 + j)];
    }
  return c;
}

Mat4 mat_transpose(const Mat4& a) {
  Mat4 t{};
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j)
      t[static_cast<std::size_t>(j * 4 + i)] = a[static_cast<std::size_t>(i * 4 + j)];
  return t;
}

}  // namespace

std::vector<double> kalman_smooth(std::span<const double> xy, double dt, const KalmanConfig& cfg) {
  if (xy.size() % 2 != 0) throw std::invalid_argument("kalman_smooth: xy must be pairs");
  const std::size_t n = xy.size() / 2;
  std::vector<double> out(xy.size());
  if (n == 0) return out;
  if (!(dt > 0.0)) throw std::invalid_argument("kalman_smooth: dt must be positive");

  // state [x, y, vx, vy], discrete white-acceleration process noise
  const Mat4 F = {1, 0, dt, 0,
                  0, 1, 0, dt,
                  0, 0, 1, 0,
                  0, 0, 0, 1};
  const double q = cfg.process_noise;
  const double dt2 = dt * dt, dt3 = dt2 * dt / 2.0, dt4 = dt2 * dt2 / 4.0;
  const Mat4 Q = {q * dt4, 0, q * dt3, 0,
                  0, q * dt4, 0, q * dt3,
                  q * dt3, 0, q * dt2, 0,
                  0, q * dt3, 0, q * dt2};
  const double r = cfg.measurement_noise;

  Vec4 s = {xy[0], xy[1], 0.0, 0.0};
  Mat4 P = {r, 0, 0, 0,
            0, r, 0, 0,
            0, 0, 100.0, 0,
            0, 0, 0, 100.0};
  out[0] = s[0];
  out[1] = s[1];

  for (std::size_t k = 1; k < n; ++k) {
    // predict
    const Vec4 sp = {s[0] + dt * s[2], s[1] + dt * s[3], s[2], s[3]};
    Mat4 Pp = mat_mul(mat_mul(F, P), mat_transpose(F));
    for (int i = 0; i < 16; ++i) Pp[static_cast<std::size_t>(i)] += Q[static_cast<std::size_t>(i)];

    // update; H selects positions, so the innovation covariance is the
    // top-left 2x2 block plus R
    const double zx = xy[2 * k], zy = xy[2 * k + 1];
    const double s00 = Pp[0] + r, s01 = Pp[1], s10 = Pp[4], s11 = Pp[5] + r;
    const double det = s00 * s11 - s01 * s10;
    const double i00 = s11 / det, i01 = -s01 / det, i10 = -s10 / det, i11 = s00 / det;
    double K[4][2];
    for (int i = 0; i < 4; ++i) {
      const double p0 = Pp[static_cast<std::size_t>(i * 4 + 0)];
      const double p1 = Pp[static_cast<std::size_t>(i * 4 + 1)];
      K[i][0] = p0 * i00 + p1 * i10;
      K[i][1] = p0 * i01 + p1 * i11;
    }
    const double rx = zx - sp[0], ry = zy - sp[1];
    for (int i = 0; i < 4; ++i)
      s[static_cast<std::size_t>(i)] = sp[static_cast<std::size_t>(i)] + K[i][0] * rx + K[i][1] * ry;
    Mat4 Pn{};
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) {
        double v = Pp[static_cast<std::size_t>(i * 4 + j)];
        v -= K[i][0] * Pp[static_cast<std::size_t>(0 * 4 + j)];
        v -= K[i][1] * Pp[static_cast<std::size_t>(1 * 4 + j)];
        Pn[static_cast<std::size_t>(i * 4 + j)] = v;
      }
    P = Pn;
    out[2 * k] = s[0];
    out[2 * k + 1] = s[1];
  }
  return out;
}

std::vector<double> pixel_to_angle(std::span<const double> xy, double pivot_x, double pivot_y) {
  if (xy.size() % 2 != 0) throw std::invalid_argument("pixel_to_angle: xy must be pairs");
  std::vector<double> out(xy.size() / 2);
  for (std::size_t k = 0; k < out.size(); ++k) {
    const double dx = xy[2 * k] - pivot_x;
    const double dy = xy[2 * k + 1] - pivot_y;
    if (dx == 0.0 && dy == 0.0)
      throw DataError("pixel_to_angle: sample " + std::to_string(k) + " coincides with the pivot");
    out[k] = std::atan2(dy, dx);
  }
  return out;
}

std::vector<double> weighted_moving_average(std::span<const double> series, int window) {
  if (window < 1) throw std::invalid_argument("weighted_moving_average: window must be >= 1");
  std::vector<double> out(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) {
    const int w = std::min<int>(window, static_cast<int>(i) + 1);
    double num = 0.0, den = 0.0;
    for (int k = 0; k < w; ++k) {
      const double weight = static_cast<double>(k + 1);  // most recent heaviest
      num += weight * series[i - static_cast<std::size_t>(w - 1 - k)];
      den += weight;
    }
    out[i] = num / den;
  }
  return out;
}

// --- audio ----------------------------------------------------------------------

namespace {

std::uint32_t read_u32(std::ifstream& f) {
  std::uint8_t b[4];
  f.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

std::uint16_t read_u16(std::ifstream& f) {
  std::uint8_t b[2];
  f.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

}  // namespace

WavData read_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path);
  char tag[4];
  f.read(tag, 4);
  if (!f || std::memcmp(tag, "RIFF", 4) != 0) throw DataError(path + ": not a RIFF file");
  (void)read_u32(f);
  f.read(tag, 4);
  if (!f || std::memcmp(tag, "WAVE", 4) != 0) throw DataError(path + ": not a WAVE file");

  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t rate = 0;
  std::vector<std::int16_t> raw;
  bool have_fmt = false, have_data = false;
  while (f && !(have_fmt && have_data)) {
    f.read(tag, 4);
    if (!f) break;
    const std::uint32_t size = read_u32(f);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      format = read_u16(f);
      channels = read_u16(f);
      rate = read_u32(f);
      (void)read_u32(f);  // byte rate
      (void)read_u16(f);  // block align
      bits = read_u16(f);
      if (size > 16) f.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      raw.resize(size / 2);
      f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(size));
      have_data = true;
    } else {
      f.seekg(size + (size & 1u), std::ios::cur);
    }
  }
  if (!have_fmt || !have_data) throw DataError(path + ": missing fmt/data chunk");
  if (format != 1 || bits != 16)
    throw DataError(path + ": only PCM-16 is supported (format=" + std::to_string(format) +
                    ", bits=" + std::to_string(bits) + ")");
  if (channels != 1 && channels != 2)
    throw DataError(path + ": unsupported channel count " + std::to_string(channels));
  if (raw.empty()) throw DataError(path + ": empty audio");

  WavData wav;
  wav.sample_rate = static_cast<double>(rate);
  const std::size_t frames = raw.size() / channels;
  wav.samples.resize(frames);
  constexpr double scale = 1.0 / 32768.0;
  if (channels == 1) {
    for (std::size_t i = 0; i < frames; ++i) wav.samples[i] = raw[i] * scale;
  } else {
    for (std::size_t i = 0; i < frames; ++i)
      wav.samples[i] = 0.5 * (raw[2 * i] + raw[2 * i + 1]) * scale;
  }
  return wav;
}

void write_wav(const std::string& path, std::span<const double> samples, int sample_rate) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open " + path + " for writing");
  auto put_u32 = [&](std::uint32_t v) {
    const std::uint8_t b[4] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8),
                               static_cast<std::uint8_t>(v >> 16),
                               static_cast<std::uint8_t>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
  };
  auto put_u16 = [&](std::uint16_t v) {
    const std::uint8_t b[2] = {static_cast<std::uint8_t>(v), static_cast<std::uint8_t>(v >> 8)};
    f.write(reinterpret_cast<const char*>(b), 2);
  };
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  f.write("RIFF", 4);
  put_u32(36 + data_bytes);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  put_u32(16);
  put_u16(1);  // PCM
  put_u16(1);  // mono
  put_u32(static_cast<std::uint32_t>(sample_rate));
  put_u32(static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(2);
  put_u16(16);
  f.write("data", 4);
  put_u32(data_bytes);
  for (double s : samples) {
    const double clamped = std::max(-1.0, std::min(1.0, s));
    const std::int16_t v = static_cast<std::int16_t>(std::lround(clamped * 32767.0));
    put_u16(static_cast<std::uint16_t>(v));
  }
  if (!f) throw DataError("write failed for " + path);
}

std::vector<double> decimate_by_two(std::span<const double> samples) {
  // 63-tap windowed-sinc low-pass at half the original Nyquist
  constexpr int taps = 63;
  constexpr int half = taps / 2;
  std::array<double, taps> h{};
  double sum = 0.0;
  for (int i = 0; i < taps; ++i) {
    const double m = i - half;
    const double sinc = (m == 0.0) ? 0.5 : std::sin(0.5 * M_PI * m) / (M_PI * m);
    const double hann = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / (taps - 1)));
    h[static_cast<std::size_t>(i)] = sinc * hann;
    sum += h[static_cast<std::size_t>(i)];
  }
  for (double& v : h) v /= sum;  // unity DC gain

  const std::size_t n_out = samples.size() / 2;
  std::vector<double> out(n_out, 0.0);
  const long n = static_cast<long>(samples.size());
  for (std::size_t k = 0; k < n_out; ++k) {
    double acc = 0.0;
    const long center = static_cast<long>(2 * k);
    for (int i = 0; i < taps; ++i) {
      const long idx = center + i - half;
      if (idx >= 0 && idx < n)
        acc += h[static_cast<std::size_t>(i)] * samples[static_cast<std::size_t>(idx)];
    }
    out[k] = acc;
  }
  return out;
}

void fft_radix2(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft_radix2: size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * M_PI / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t j = 0; j < len / 2; ++j) {
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + len / 2] * w;
        a[i + j] = u + v;
        a[i + j + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

AudioFeatures wav_features(std::span<const double> samples, double sample_rate) {
  if (samples.empty()) throw DataError("wav_features: empty audio");
  if (static_cast<int>(samples.size()) < kFftSize)
    throw DataError("wav_features: audio shorter than one analysis frame");

  const int frames = static_cast<int>((samples.size() - kFftSize) / kHopSize) + 1;
  AudioFeatures out;
  out.frame_rate = sample_rate / kHopSize;
  out.t.resize(static_cast<std::size_t>(frames));
  out.rms.resize(static_cast<std::size_t>(frames));
  out.centroid.resize(static_cast<std::size_t>(frames));
  out.peak_freq.resize(static_cast<std::size_t>(frames));

  std::array<double, kFftSize> hann{};
  for (int i = 0; i < kFftSize; ++i)
    hann[static_cast<std::size_t>(i)] = 0.5 * (1.0 - std::cos(2.0 * M_PI * i / (kFftSize - 1)));

  const double bin_hz = sample_rate / kFftSize;
  std::vector<std::complex<double>> buf(kFftSize);
  for (int k = 0; k < frames; ++k) {
    const std::size_t start = static_cast<std::size_t>(k) * kHopSize;
    double energy = 0.0;
    for (int i = 0; i < kFftSize; ++i) {
      const double s = samples[start + static_cast<std::size_t>(i)];
      energy += s * s;
      buf[static_cast<std::size_t>(i)] = s * hann[static_cast<std::size_t>(i)];
    }
    fft_radix2(buf);

    double mag_sum = 0.0, weighted = 0.0, best_mag = 0.0;
    int best_bin = 0;
    for (int b = 0; b <= kFftSize / 2; ++b) {
      const double mag = std::abs(buf[static_cast<std::size_t>(b)]);
      mag_sum += mag;
      weighted += mag * (b * bin_hz);
      if (b >= 1 && mag > best_mag) {
        best_mag = mag;
        best_bin = b;
      }
    }
    out.t[static_cast<std::size_t>(k)] = (static_cast<double>(start) + kFftSize / 2.0) / sample_rate;
    out.rms[static_cast<std::size_t>(k)] = std::sqrt(energy / kFftSize);
    // silence convention: centroid and peak report 0
    out.centroid[static_cast<std::size_t>(k)] = mag_sum > 1e-12 ? weighted / mag_sum : 0.0;
    out.peak_freq[static_cast<std::size_t>(k)] = best_mag > 1e-12 ? best_bin * bin_hz : 0.0;
  }
  return out;
}

AudioFeatures wav_features_file(const std::string& path) {
  WavData wav = read_wav(path);
  if (wav.sample_rate == 44100.0) {
    wav.samples = decimate_by_two(wav.samples);
    wav.sample_rate = kAudioRate;
  }
  return wav_features(wav.samples, wav.sample_rate);
}

std::vector<double> apply_audio_prior(std::span<const double> peak_freq, const AudioPrior& prior) {
  if (prior.alpha == 0.0) throw std::invalid_argument("audio prior: alpha must be nonzero");
  std::vector<double> v(peak_freq.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (peak_freq[i] - prior.beta) / prior.alpha;
  return v;
}

// --- chart digitization ------------------------------------------------------------

DigitizedSeries digitize_chart(const std::string& image_path, const Rgb& curve_color,
                               const AxisCalibration& calib, double color_tol) {
  if (calib.px0 == calib.px1 || calib.py0 == calib.py1 || calib.x0 == calib.x1 ||
      calib.y0 == calib.y1)
    throw DataError("digitize_chart: degenerate axis calibration (coincident reference points)");

  const cv::Mat img = cv::imread(image_path, cv::IMREAD_COLOR);
  if (img.empty()) throw DataError("digitize_chart: cannot read image " + image_path);

  const double tol2 = color_tol * color_tol;
  const double col_to_x = (calib.x1 - calib.x0) / (calib.px1 - calib.px0);
  const double row_to_y = (calib.y1 - calib.y0) / (calib.py1 - calib.py0);

  struct ColSample {
    double t, y;
  };
  std::vector<ColSample> cols;
  for (int c = 0; c < img.cols; ++c) {
    double row_sum = 0.0;
    int count = 0;
    for (int r = 0; r < img.rows; ++r) {
      const cv::Vec3b px = img.at<cv::Vec3b>(r, c);  // BGR
      const double db = px[0] - static_cast<double>(curve_color.b);
      const double dg = px[1] - static_cast<double>(curve_color.g);
      const double dr = px[2] - static_cast<double>(curve_color.r);
      if (db * db + dg * dg + dr * dr <= tol2) {
        row_sum += r;
        ++count;
      }
    }
    if (count > 0) {
      const double mean_row = row_sum / count;
      cols.push_back({calib.x0 + (c - calib.px0) * col_to_x,
                      calib.y0 + (mean_row - calib.py0) * row_to_y});
    }
  }
  if (cols.empty()) throw DataError("digitize_chart: no curve found for the given color");

  // columns scan left to right; flip when the abscissa calibration is reversed
  if (col_to_x < 0.0) std::reverse(cols.begin(), cols.end());

  DigitizedSeries out;
  out.t.reserve(cols.size());
  out.y.reserve(cols.size());
  for (const auto& cs : cols) {
    out.t.push_back(cs.t);
    out.y.push_back(cs.y);
  }
  return out;
}

// --- alignment -----------------------------------------------------------------------

std::vector<double> spatial_encode(std::span<const double> t, std::span<const double> values,
                                   int width, int n) {
  if (t.size() < 2) throw std::invalid_argument("spatial_encode: need at least two samples");
  if (values.size() != t.size() * static_cast<std::size_t>(width))
    throw std::invalid_argument("spatial_encode: value size mismatch");
  std::vector<double> out(static_cast<std::size_t>(n) * static_cast<std::size_t>(width));
  const double t0 = t.front(), t1 = t.back();
  for (int k = 0; k < n; ++k) {
    const double tk = t0 + (t1 - t0) * static_cast<double>(k) / static_cast<double>(n - 1);
    interp_series(t, values, width, tk,
                  std::span<double>(out.data() + static_cast<std::size_t>(k) * static_cast<std::size_t>(width),
                                    static_cast<std::size_t>(width)));
  }
  return out;
}

AlignedFeatures align(const std::vector<ModalitySeries>& modalities, int declared_video,
                      int declared_audio, int declared_image) {
  if (modalities.empty()) throw DataError("align: at least one modality required");

  const ModalitySeries* video = nullptr;
  const ModalitySeries* audio = nullptr;
  const ModalitySeries* image = nullptr;
  for (const auto& m : modalities) {
    if (m.t.size() < 2) throw DataError("align: modality series needs at least two samples");
    if (m.values.size() != m.t.size() * static_cast<std::size_t>(m.width))
      throw DataError("align: modality value size mismatch");
    switch (m.kind) {
      case Modality::Video: video = &m; break;
      case Modality::Audio: audio = &m; break;
      case Modality::Image: image = &m; break;
    }
  }

  // reference grid: video when present, else the densest modality
  const ModalitySeries* ref = video;
  if (!ref)
    for (const auto& m : modalities)
      if (!ref || m.t.size() > ref->t.size()) ref = &m;

  const double ref_lo = ref->t.front(), ref_hi = ref->t.back();
  const double ref_span = ref_hi - ref_lo;
  for (const auto& m : modalities) {
    const double lo = std::max(ref_lo, m.t.front());
    const double hi = std::min(ref_hi, m.t.back());
    if (hi - lo < 0.5 * ref_span)
      throw DataError("align: modality overlaps the reference grid by less than half");
  }

  AlignedFeatures out;
  out.timestamps = ref->t;
  out.fps = static_cast<double>(ref->t.size() - 1) / ref_span;
  out.d_video = video ? video->width : declared_video;
  out.d_audio = audio ? audio->width : declared_audio;
  out.d_image = image ? image->width : declared_image;

  const int w = out.width();
  if (w == 0) throw DataError("align: zero total feature width");
  out.features.assign(out.samples() * static_cast<std::size_t>(w), 0.0);

  const ModalitySeries* blocks[3] = {video, audio, image};
  const int widths[3] = {out.d_video, out.d_audio, out.d_image};
  int offset = 0;
  for (int b = 0; b < 3; ++b) {
    const ModalitySeries* m = blocks[b];
    if (m) {
      for (std::size_t k = 0; k < out.samples(); ++k)
        interp_series(m->t, m->values, m->width, out.timestamps[k],
                      std::span<double>(out.features.data() + k * static_cast<std::size_t>(w) +
                                            static_cast<std::size_t>(offset),
                                        static_cast<std::size_t>(m->width)));
    }
    offset += widths[b];  // absent blocks stay zero at their declared width
  }

  out.encoded = spatial_encode(out.timestamps, out.features, w, kSpatialSamples);
  return out;
}

}  // namespace odefit::ingest
