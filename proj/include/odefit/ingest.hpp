#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "odefit/integrator.hpp"

// Multimodal front-end: trajectory CSVs, tracked-pixel smoothing and
// transforms, WAV spectral features with the linear audio-speed prior,
// chart-image digitization, and temporal alignment onto a common grid.
// Ingest operations are pure per file and may run concurrently.

namespace odefit::ingest {

// File and parse problems; the CLI maps these to the data-error exit code.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// --- trajectory CSV (header: t,x1..xD[,u1..uF]) ------------------------------

sim::Trajectory read_csv_trajectory(const std::string& path);
void write_csv_trajectory(const std::string& path, const sim::Trajectory& tr);

// --- tracked-pixel stages -----------------------------------------------------

struct KalmanConfig {
  double process_noise = 1e-2;     // acceleration noise density
  double measurement_noise = 1.0;  // px^2
};

// Constant-velocity Kalman filter over a 2-D pixel track (rows of x,y).
// Returns the filtered positions, same layout.
std::vector<double> kalman_smooth(std::span<const double> xy, double dt,
                                  const KalmanConfig& cfg = {});

// Two-argument arctangent of (y - y_p, x - x_p), radians. A point equal to
// the pivot is rejected.
std::vector<double> pixel_to_angle(std::span<const double> xy, double pivot_x, double pivot_y);

// Linearly-weighted moving average (most recent sample heaviest) with a
// shrinking window at the head; output length equals input length.
std::vector<double> weighted_moving_average(std::span<const double> series, int window = 10);

// --- audio --------------------------------------------------------------------

constexpr int kFftSize = 2048;
constexpr int kHopSize = 512;
constexpr double kAudioRate = 22050.0;

struct WavData {
  std::vector<double> samples;  // mono, in [-1, 1]
  double sample_rate = 0.0;
};

// PCM-16 WAV only; stereo is averaged to mono.
WavData read_wav(const std::string& path);
void write_wav(const std::string& path, std::span<const double> samples, int sample_rate);

// Halves the sample rate: windowed-sinc low-pass at the new Nyquist, then
// decimation by two.
std::vector<double> decimate_by_two(std::span<const double> samples);

// In-place radix-2 FFT; size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& a);

struct AudioFeatures {
  std::vector<double> t;          // frame centers, seconds
  std::vector<double> rms;        // per-frame energy
  std::vector<double> centroid;   // Hz; 0 for silent frames
  std::vector<double> peak_freq;  // Hz, argmax magnitude bin; 0 for silence
  double frame_rate = 0.0;
};

// Hann-windowed STFT (2048/512) features. Input must already be at the
// analysis rate; use decimate_by_two for 44.1 kHz recordings.
AudioFeatures wav_features(std::span<const double> samples, double sample_rate);

// Reads a WAV, resampling 44.1 kHz material down to 22.05 kHz first.
AudioFeatures wav_features_file(const std::string& path);

// f_tone ~= alpha * v + beta maps physical speed to tonal frequency.
struct AudioPrior {
  double alpha = 0.0;
  double beta = 0.0;
};

// Inverts the prior: v = (f - beta) / alpha. alpha must be nonzero.
std::vector<double> apply_audio_prior(std::span<const double> peak_freq, const AudioPrior& prior);

// --- chart digitization ---------------------------------------------------------

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
};

// Two reference points per axis, pixel coordinate paired with data value.
struct AxisCalibration {
  double px0 = 0, px1 = 0, x0 = 0, x1 = 0;  // image column -> abscissa
  double py0 = 0, py1 = 0, y0 = 0, y1 = 0;  // image row -> ordinate
};

struct DigitizedSeries {
  std::vector<double> t;
  std::vector<double> y;
};

// Isolates pixels within `color_tol` (Euclidean RGB distance) of the curve
// color, takes the mean masked row per occupied column, and maps both axes
// through the calibration. Output t is strictly increasing with one y per
// occupied column.
DigitizedSeries digitize_chart(const std::string& image_path, const Rgb& curve_color,
                               const AxisCalibration& calib, double color_tol = 60.0);

// --- alignment -------------------------------------------------------------------

constexpr int kSpatialSamples = 100;

enum class Modality { Video, Audio, Image };

struct ModalitySeries {
  Modality kind{};
  std::vector<double> t;
  std::vector<double> values;  // rows of `width` per timestamp
  int width = 0;
};

// Resamples a (t, values) series onto n uniform samples spanning its time
// range. Already-uniform series of length n pass through unchanged.
std::vector<double> spatial_encode(std::span<const double> t, std::span<const double> values,
                                   int width, int n = kSpatialSamples);

struct AlignedFeatures {
  std::vector<double> timestamps;  // common grid
  double fps = 0.0;
  int d_video = 0, d_audio = 0, d_image = 0;
  std::vector<double> features;  // samples() x width(), absent blocks zero
  std::vector<double> encoded;   // kSpatialSamples x width()
  int width() const { return d_video + d_audio + d_image; }
  std::size_t samples() const { return timestamps.size(); }
};

// Zero-width entries in `declared_*` default to the width of the matching
// series (0 when absent). The reference grid is the video grid when present,
// otherwise the densest modality. Modalities overlapping the reference span
// by less than half are rejected.
AlignedFeatures align(const std::vector<ModalitySeries>& modalities, int declared_video = 0,
                      int declared_audio = 0, int declared_image = 0);

}  // namespace odefit::ingest
