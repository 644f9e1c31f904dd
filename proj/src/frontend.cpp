// Copyright 2025-2026 The zssl Authors
//
// Licensed under the Apache License, Version 2.0

#include "zssl/frontend.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace zssl {

namespace {

constexpr double kLogEnergyFloor = -23.025850929940457;  // ln(1e-10)

FrontendConfig make_geometry(int64_t channels, int64_t sample_rate,
                             NormKind first, NormKind rest) {
  static constexpr int64_t kKernels[7] = {10, 3, 3, 3, 3, 2, 2};
  static constexpr int64_t kStrides[7] = {5, 2, 2, 2, 2, 2, 2};
  FrontendConfig cfg;
  cfg.sample_rate = sample_rate;
  for (int i = 0; i < 7; ++i) {
    ConvLayerSpec layer;
    layer.in_channels = i == 0 ? 1 : channels;
    layer.out_channels = channels;
    layer.kernel = kKernels[i];
    layer.stride = kStrides[i];
    layer.normalization = i == 0 ? first : rest;
    cfg.layers.push_back(layer);
  }
  return cfg;
}

}  // namespace

FrontendConfig FrontendConfig::make_default(int64_t channels,
                                            int64_t sample_rate) {
  return make_geometry(channels, sample_rate, NormKind::kGroupNormFullPrecision,
                       NormKind::kNone);
}

FrontendConfig FrontendConfig::make_layer_norm_everywhere(int64_t channels,
                                                          int64_t sample_rate) {
  return make_geometry(channels, sample_rate, NormKind::kLayerNormFullPrecision,
                       NormKind::kLayerNormFullPrecision);
}

void FrontendConfig::validate() const {
  if (layers.size() != 7) {
    throw ConfigError("frontend wants 7 conv layers, got " +
                      std::to_string(layers.size()));
  }
  int64_t prev = 1;
  for (size_t i = 0; i < layers.size(); ++i) {
    const ConvLayerSpec &l = layers[i];
    if (l.stride < 1 || l.kernel < l.stride) {
      throw ConfigError("frontend layer " + std::to_string(i) +
                        ": want stride >= 1 and kernel >= stride");
    }
    if (l.in_channels != prev && !(i == 0 && l.in_channels == 1)) {
      throw ConfigError("frontend layer " + std::to_string(i) +
                        ": in_channels " + std::to_string(l.in_channels) +
                        " does not chain from previous layer");
    }
    prev = l.out_channels;
  }
  if (sample_rate % 50 != 0 || total_stride() != sample_rate / 50) {
    throw ConfigError("frontend stride product " +
                      std::to_string(total_stride()) +
                      " does not produce 50 Hz from " +
                      std::to_string(sample_rate) + " Hz");
  }
}

int64_t FrontendConfig::total_stride() const {
  int64_t s = 1;
  for (const ConvLayerSpec &l : layers) s *= l.stride;
  return s;
}

int64_t FrontendConfig::output_length(int64_t samples) const {
  int64_t t = samples;
  for (const ConvLayerSpec &l : layers) {
    if (t < l.kernel) return 0;
    t = (t - l.kernel) / l.stride + 1;
  }
  return t;
}

int64_t FrontendConfig::receptive_field() const {
  // Invert the recurrence for one output frame: the smallest S with
  // output_length(S) == 1.
  int64_t t = 1;
  for (auto it = layers.rbegin(); it != layers.rend(); ++it) {
    t = (t - 1) * it->stride + it->kernel;
  }
  return t;
}

int64_t FrontendConfig::output_channels() const {
  return layers.back().out_channels;
}

ParamMap frontend_init_params(const FrontendConfig &config,
                              std::mt19937_64 &rng,
                              const std::string &prefix) {
  config.validate();
  ParamMap params;
  for (size_t i = 0; i < config.layers.size(); ++i) {
    const ConvLayerSpec &l = config.layers[i];
    const std::string base = prefix + "conv" + std::to_string(i) + ".";
    const double stddev =
        1.0 / std::sqrt(static_cast<double>(l.in_channels * l.kernel));
    params[base + "w"] = Tensor::randn({l.out_channels, l.in_channels, l.kernel},
                                       rng, stddev, true);
    params[base + "b"] = Tensor::zeros({l.out_channels}, true);
    if (l.normalization != NormKind::kNone) {
      params[base + "norm.gamma"] = Tensor::full({l.out_channels}, 1.0, true);
      params[base + "norm.beta"] = Tensor::zeros({l.out_channels}, true);
    }
  }
  return params;
}

Tensor frontend_extract(Tape &tape, const FrontendConfig &config,
                        const ParamMap &params, const Tensor &wave,
                        const std::string &prefix) {
  config.validate();
  if (wave.rank() != 2 || wave.rows() != 1) {
    throw ShapeError("frontend_extract: want wave [1,S], got " +
                     shape_str(wave.shape()));
  }
  const int64_t rf = config.receptive_field();
  if (wave.cols() < rf) {
    throw ShapeError("frontend_extract: " + std::to_string(wave.cols()) +
                     " samples is below the receptive field of " +
                     std::to_string(rf));
  }
  Tensor x = wave;  // [C,L] with C=1
  for (size_t i = 0; i < config.layers.size(); ++i) {
    const ConvLayerSpec &l = config.layers[i];
    const std::string base = prefix + "conv" + std::to_string(i) + ".";
    x = tape.conv1d(x, params.at(base + "w"), params.at(base + "b"), l.stride);
    switch (l.normalization) {
      case NormKind::kNone:
        break;
      case NormKind::kGroupNormFullPrecision:
        x = tape.group_norm(x, params.at(base + "norm.gamma"),
                            params.at(base + "norm.beta"));
        break;
      case NormKind::kLayerNormFullPrecision:
        // Normalize across channels per time step: [C,L] -> [L,C] rows.
        x = tape.transpose(tape.layer_norm(tape.transpose(x),
                                           params.at(base + "norm.gamma"),
                                           params.at(base + "norm.beta")));
        break;
    }
    x = tape.swoosh_r(x);
  }
  return tape.transpose(x);  // [T,C_out]
}

double estimate_activation_bytes(const FrontendConfig &config, int64_t batch,
                                 double seconds, double norm_bytes,
                                 double act_bytes) {
  if (batch < 0 || seconds < 0.0) {
    throw ContractError("estimate_activation_bytes: negative batch or seconds");
  }
  double total = 0.0;
  double cum_stride = 1.0;
  for (const ConvLayerSpec &l : config.layers) {
    cum_stride *= static_cast<double>(l.stride);
    const double frames =
        seconds * static_cast<double>(config.sample_rate) / cum_stride;
    const double elems =
        static_cast<double>(batch) * static_cast<double>(l.out_channels) * frames;
    total += elems * act_bytes;
    if (l.normalization != NormKind::kNone) total += elems * norm_bytes;
  }
  return total;
}

// ---------------------------------------------------------------------------
// MFCC-style path

namespace {

// In-place iterative radix-2 FFT over interleaved (re, im) pairs.
void fft_radix2(std::vector<double> &re, std::vector<double> &im) {
  const size_t n = re.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (size_t i = 0; i < n; i += len) {
      double cr = 1.0, ci = 0.0;
      for (size_t k = 0; k < len / 2; ++k) {
        const size_t a = i + k, b = i + k + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double ncr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = ncr;
      }
    }
  }
}

size_t next_pow2(size_t n) {
  size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

double mel_of_hz(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }

namespace {
double hz_of_mel(double mel) {
  return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0);
}
}  // namespace

Tensor mfcc_like(const Tensor &wave, int64_t n_mels, int64_t n_ceps,
                 int64_t sample_rate) {
  if (wave.rank() != 2 || wave.rows() != 1) {
    throw ShapeError("mfcc_like: want wave [1,S], got " +
                     shape_str(wave.shape()));
  }
  if (n_mels < n_ceps || n_ceps < 1) {
    throw ContractError("mfcc_like: want 1 <= n_ceps <= n_mels");
  }
  const int64_t window = sample_rate * 25 / 1000;  // 25 ms
  const int64_t hop = sample_rate * 10 / 1000;     // 10 ms
  const int64_t s = wave.cols();
  if (s < window) {
    throw ShapeError("mfcc_like: " + std::to_string(s) +
                     " samples is shorter than one " + std::to_string(window) +
                     "-sample window");
  }
  const int64_t t = (s - window) / hop + 1;
  const size_t nfft = next_pow2(static_cast<size_t>(window));
  const size_t nbins = nfft / 2 + 1;

  // Hann window.
  std::vector<double> win(static_cast<size_t>(window));
  for (int64_t i = 0; i < window; ++i) {
    win[static_cast<size_t>(i)] =
        0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                             static_cast<double>(window - 1));
  }

  // Triangular mel filterbank over FFT bins.
  const double mel_lo = mel_of_hz(0.0);
  const double mel_hi = mel_of_hz(static_cast<double>(sample_rate) / 2.0);
  std::vector<double> centers(static_cast<size_t>(n_mels) + 2);
  for (int64_t m = 0; m < n_mels + 2; ++m) {
    const double mel = mel_lo + (mel_hi - mel_lo) * static_cast<double>(m) /
                                    static_cast<double>(n_mels + 1);
    centers[static_cast<size_t>(m)] =
        hz_of_mel(mel) * static_cast<double>(nfft) /
        static_cast<double>(sample_rate);
  }
  std::vector<double> fbank(static_cast<size_t>(n_mels) * nbins, 0.0);
  for (int64_t m = 0; m < n_mels; ++m) {
    const double lo = centers[static_cast<size_t>(m)];
    const double mid = centers[static_cast<size_t>(m) + 1];
    const double hi = centers[static_cast<size_t>(m) + 2];
    for (size_t b = 0; b < nbins; ++b) {
      const double fb = static_cast<double>(b);
      double w = 0.0;
      if (fb > lo && fb < hi) {
        w = fb <= mid ? (fb - lo) / (mid - lo) : (hi - fb) / (hi - mid);
      }
      fbank[static_cast<size_t>(m) * nbins + b] = w;
    }
  }

  // Per frame: window, FFT, power, mel energies, log, DCT-II (orthonormal).
  const int64_t width = 3 * n_ceps == 39 ? 3 * n_ceps : n_ceps;
  Tensor out = Tensor::zeros({t, width});
  std::vector<double> re(nfft), im(nfft);
  std::vector<double> logmel(static_cast<size_t>(n_mels));
  const double *pw = wave.data();
  for (int64_t f = 0; f < t; ++f) {
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (int64_t i = 0; i < window; ++i) {
      re[static_cast<size_t>(i)] =
          pw[f * hop + i] * win[static_cast<size_t>(i)];
    }
    fft_radix2(re, im);
    for (int64_t m = 0; m < n_mels; ++m) {
      double e = 0.0;
      const double *fb = fbank.data() + static_cast<size_t>(m) * nbins;
      for (size_t b = 0; b < nbins; ++b) {
        e += fb[b] * (re[b] * re[b] + im[b] * im[b]);
      }
      logmel[static_cast<size_t>(m)] =
          e > 1e-10 ? std::log(e) : kLogEnergyFloor;
    }
    for (int64_t c = 0; c < n_ceps; ++c) {
      double acc = 0.0;
      for (int64_t m = 0; m < n_mels; ++m) {
        acc += logmel[static_cast<size_t>(m)] *
               std::cos(std::numbers::pi * static_cast<double>(c) *
                        (static_cast<double>(m) + 0.5) /
                        static_cast<double>(n_mels));
      }
      const double scale =
          c == 0 ? std::sqrt(1.0 / static_cast<double>(n_mels))
                 : std::sqrt(2.0 / static_cast<double>(n_mels));
      out.data()[f * width + c] = scale * acc;
    }
  }

  if (width == n_ceps) return out;

  // Deltas by 2-frame regression, then delta-deltas of the deltas; edge
  // frames clamp to the sequence boundary.
  auto fill_deltas = [&](int64_t src_col, int64_t dst_col) {
    for (int64_t f = 0; f < t; ++f) {
      for (int64_t c = 0; c < n_ceps; ++c) {
        double num = 0.0;
        for (int64_t n = 1; n <= 2; ++n) {
          const int64_t fp = std::min(f + n, t - 1);
          const int64_t fm = std::max(f - n, static_cast<int64_t>(0));
          num += static_cast<double>(n) *
                 (out.data()[fp * width + src_col + c] -
                  out.data()[fm * width + src_col + c]);
        }
        out.data()[f * width + dst_col + c] = num / 10.0;  // 2*(1^2+2^2)
      }
    }
  };
  fill_deltas(0, n_ceps);
  fill_deltas(n_ceps, 2 * n_ceps);
  return out;
}

}  // namespace zssl
