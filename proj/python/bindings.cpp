// Copyright 2025-2026 The zssl Authors
//
// Python bindings for the zssl core. The module mirrors the C++ surface at
// the granularity a smoke test needs: tensors in, tensors out, no silent
// copies of training state.
//
// Licensed under the Apache License, Version 2.0

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <random>

#include "zssl/asr.hpp"
#include "zssl/checkpoint.hpp"
#include "zssl/encoder.hpp"
#include "zssl/frontend.hpp"
#include "zssl/kmeans.hpp"
#include "zssl/objective.hpp"
#include "zssl/optimizer.hpp"
#include "zssl/tensor.hpp"

namespace py = pybind11;
using zssl::Tape;
using zssl::Tensor;

namespace {

Tensor make_tensor(const std::vector<int64_t> &shape,
                   const std::vector<double> &values) {
  return Tensor::from(zssl::Shape(shape.begin(), shape.end()), values);
}

// The dict <-> ParamMap conversions copy tensor handles, not buffers, so
// in-place parameter updates stay visible to the Python-side objects.
zssl::ParamMap to_param_map(const std::map<std::string, Tensor> &in) {
  zssl::ParamMap out;
  for (const auto &[k, v] : in) out.emplace(k, v);
  return out;
}

std::map<std::string, Tensor> from_param_map(const zssl::ParamMap &in) {
  return {in.begin(), in.end()};
}

}  // namespace

PYBIND11_MODULE(_zssl, m) {
  m.doc() = "self-supervised speech pre-training core";

  py::register_exception<zssl::Error>(m, "ZsslError");

  m.attr("VOCAB_SIZE") = zssl::kVocabSize;
  m.attr("BLANK") = zssl::kBlankIndex;

  py::class_<Tensor>(m, "Tensor")
      .def(py::init(&make_tensor), py::arg("shape"), py::arg("values"))
      .def_property_readonly("shape",
                             [](const Tensor &t) {
                               return std::vector<int64_t>(t.shape().begin(),
                                                           t.shape().end());
                             })
      .def_property_readonly("values",
                             [](const Tensor &t) {
                               return std::vector<double>(t.value().begin(),
                                                          t.value().end());
                             })
      .def_property_readonly("grad",
                             [](const Tensor &t) {
                               return std::vector<double>(t.grad().begin(),
                                                          t.grad().end());
                             })
      .def_property("requires_grad", &Tensor::requires_grad,
                    &Tensor::set_requires_grad)
      .def("item", &Tensor::item)
      .def("clone", &Tensor::clone);

  m.def("randn", [](const std::vector<int64_t> &shape, uint64_t seed,
                    double stddev) {
    std::mt19937_64 rng(seed);
    return Tensor::randn(zssl::Shape(shape.begin(), shape.end()), rng, stddev);
  }, py::arg("shape"), py::arg("seed"), py::arg("stddev") = 1.0);

  py::class_<Tape>(m, "Tape")
      .def(py::init<>())
      .def("set_grad_enabled", &Tape::set_grad_enabled)
      .def("add", &Tape::add)
      .def("sub", &Tape::sub)
      .def("mul", &Tape::mul)
      .def("scale", &Tape::scale)
      .def("matmul", &Tape::matmul)
      .def("add_bias", &Tape::add_bias)
      .def("tanh", &Tape::tanh)
      .def("sum", &Tape::sum)
      .def("mean", &Tape::mean)
      .def("softmax", &Tape::softmax)
      .def("log_softmax", &Tape::log_softmax)
      .def("swoosh_r", &Tape::swoosh_r)
      .def("swoosh_l", &Tape::swoosh_l)
      .def("bias_norm", &Tape::bias_norm)
      .def("backward", &Tape::backward)
      .def("flops", &Tape::flops)
      .def("op_count", [](const Tape &t, const std::string &op) {
        return t.op_count(op);
      });

  m.def("save_tensors", [](const std::string &path,
                           const std::map<std::string, Tensor> &tensors) {
    zssl::save_tensors(path, to_param_map(tensors));
  });
  m.def("load_tensors", [](const std::string &path) {
    return from_param_map(zssl::load_tensors(path));
  });

  // -- features ------------------------------------------------------------
  m.def("mfcc_like", &zssl::mfcc_like, py::arg("wave"), py::arg("n_mels"),
        py::arg("n_ceps"), py::arg("sample_rate") = 16000);

  py::class_<zssl::FrontendConfig>(m, "FrontendConfig")
      .def_static("default", &zssl::FrontendConfig::make_default,
                  py::arg("channels") = 512, py::arg("sample_rate") = 16000)
      .def_static("layer_norm_everywhere",
                  &zssl::FrontendConfig::make_layer_norm_everywhere,
                  py::arg("channels") = 512, py::arg("sample_rate") = 16000)
      .def("output_length", &zssl::FrontendConfig::output_length)
      .def("output_channels", &zssl::FrontendConfig::output_channels)
      .def("total_stride", &zssl::FrontendConfig::total_stride);
  m.def("frontend_init_params",
        [](const zssl::FrontendConfig &cfg, uint64_t seed) {
          std::mt19937_64 rng(seed);
          return from_param_map(zssl::frontend_init_params(cfg, rng));
        },
        py::arg("config"), py::arg("seed") = 0);
  m.def("frontend_extract",
        [](Tape &tape, const zssl::FrontendConfig &cfg,
           const std::map<std::string, Tensor> &params, const Tensor &wave) {
          return zssl::frontend_extract(tape, cfg, to_param_map(params), wave);
        });

  // -- encoder -------------------------------------------------------------
  py::class_<zssl::EncoderConfig>(m, "EncoderConfig")
      .def_static("tiny", &zssl::EncoderConfig::make_tiny)
      .def_static("small", &zssl::EncoderConfig::make_small,
                  py::arg("base_dim") = 16)
      .def_static("base", &zssl::EncoderConfig::make_base)
      .def("input_dim", &zssl::EncoderConfig::input_dim)
      .def("output_dim", &zssl::EncoderConfig::output_dim)
      .def("stack_lengths", &zssl::EncoderConfig::stack_lengths);
  m.def("encoder_init_params",
        [](const zssl::EncoderConfig &cfg, uint64_t seed) {
          std::mt19937_64 rng(seed);
          return from_param_map(zssl::encoder_init_params(cfg, rng));
        },
        py::arg("config"), py::arg("seed") = 0);
  m.def("encoder_forward",
        [](Tape &tape, const zssl::EncoderConfig &cfg,
           const std::map<std::string, Tensor> &params, const Tensor &x) {
          return zssl::encoder_forward(tape, cfg, to_param_map(params), x);
        });
  m.def("attention_flops_oracle", &zssl::attention_flops_oracle);
  m.def("transformer_attention_flops_oracle",
        &zssl::transformer_attention_flops_oracle);

  // -- masked-prediction objective ----------------------------------------
  m.def("sample_masks", [](double start_prob, int64_t span_len,
                           int64_t min_masks, uint64_t seed, int64_t t) {
    return zssl::sample_masks({start_prob, span_len, min_masks, seed}, t);
  });
  m.def("apply_mask", &zssl::apply_mask);
  m.def("ce_loss", &zssl::ce_loss);

  // -- CTC and decoding ----------------------------------------------------
  m.def("text_to_labels", &zssl::text_to_labels);
  m.def("labels_to_text", &zssl::labels_to_text);
  m.def("ctc_loss", [](Tape &tape, const Tensor &log_probs,
                       const std::vector<int64_t> &target) {
    zssl::CtcResult res = zssl::ctc_loss(tape, log_probs, target);
    return py::make_tuple(res.loss, res.feasible);
  });
  m.def("ctc_greedy", &zssl::ctc_greedy);

  py::class_<zssl::NGramLM>(m, "NGramLM")
      .def(py::init<>())
      .def_static("train", &zssl::NGramLM::train, py::arg("corpus"),
                  py::arg("order"))
      .def_static("load", &zssl::NGramLM::load)
      .def("save", &zssl::NGramLM::save)
      .def("order", &zssl::NGramLM::order)
      .def("sequence_log_prob", &zssl::NGramLM::sequence_log_prob);

  m.def("ctc_beam_lm",
        [](const Tensor &log_probs, const zssl::NGramLM &lm, int64_t beam,
           double lm_weight, double length_weight, bool length_in_words) {
          zssl::BeamConfig cfg{beam, lm_weight, length_weight, length_in_words};
          return zssl::ctc_beam_lm(log_probs, lm, cfg);
        },
        py::arg("log_probs"), py::arg("lm"), py::arg("beam") = 16,
        py::arg("lm_weight") = 0.5, py::arg("length_weight") = 0.1,
        py::arg("length_in_words") = false);

  m.def("split_words", &zssl::split_words);
  m.def("wer", [](const std::vector<std::string> &hyp,
                  const std::vector<std::string> &ref) {
    const zssl::WerResult r = zssl::wer(hyp, ref);
    py::dict out;
    out["substitutions"] = r.substitutions;
    out["insertions"] = r.insertions;
    out["deletions"] = r.deletions;
    out["errors"] = r.errors();
    out["rate"] = r.rate;
    return out;
  });

  // -- clustering ----------------------------------------------------------
  py::class_<zssl::Codebook>(m, "Codebook")
      .def_property_readonly("centroids",
                             [](const zssl::Codebook &cb) { return cb.centroids; })
      .def("num_units", &zssl::Codebook::num_units)
      .def("feature_dim", &zssl::Codebook::feature_dim);
  m.def("kmeans_fit",
        [](const Tensor &features, int64_t k, int64_t iters, uint64_t seed) {
          return zssl::kmeans_fit(features, k, iters, seed);
        },
        py::arg("features"), py::arg("k"), py::arg("iters") = 20,
        py::arg("seed") = 0);
  m.def("kmeans_label", &zssl::kmeans_label);

  // -- optimization --------------------------------------------------------
  py::class_<zssl::ScaledAdam>(m, "ScaledAdam")
      .def(py::init<>())
      .def("step",
           [](zssl::ScaledAdam &opt, std::map<std::string, Tensor> &params,
              double lr) {
             zssl::ParamMap pm = to_param_map(params);
             opt.step(pm, lr);
           })
      .def("step_count", &zssl::ScaledAdam::step_count);
  m.def("eden_lr",
        [](double base_lr, double step, double epoch, double step_warmup,
           double epoch_warmup) {
          return zssl::eden_lr({base_lr, step_warmup, epoch_warmup}, step,
                               epoch);
        },
        py::arg("base_lr"), py::arg("step"), py::arg("epoch"),
        py::arg("step_warmup") = 7500.0, py::arg("epoch_warmup") = 3.5);
}
