#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "qkd/checkpoint.hpp"
#include "qkd/config.hpp"
#include "qkd/data.hpp"
#include "qkd/distill.hpp"
#include "qkd/pipeline.hpp"
#include "qkd/quant.hpp"

namespace py = pybind11;
using namespace qkd;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

Tensor to_tensor(const DoubleArray& arr) {
  std::vector<std::size_t> shape(arr.ndim());
  for (py::ssize_t i = 0; i < arr.ndim(); ++i) shape[i] = static_cast<std::size_t>(arr.shape(i));
  std::vector<double> data(arr.data(), arr.data() + arr.size());
  return Tensor(std::move(shape), std::move(data));
}

py::array_t<double> to_array(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape().begin(), t.shape().end());
  py::array_t<double> out(shape);
  std::copy(t.data(), t.data() + t.size(), out.mutable_data());
  return out;
}

QuantSpec make_spec(int bits, bool is_signed, bool enabled) { return {bits, is_signed, enabled}; }

ExperimentConfig config_from_json(const std::string& text) {
  ExperimentConfig cfg;
  if (!text.empty()) cfg.apply_json_text(text);
  return cfg;
}

py::list record_to_list(const RunRecord& rec) {
  py::list rows;
  for (const RunRow& r : rec.rows) {
    py::dict d;
    d["epoch"] = r.epoch;
    d["phase"] = r.phase;
    d["mode"] = r.mode;
    d["bits"] = r.bits;
    d["student_train_top1"] = r.student_train_top1;
    d["student_test_top1"] = r.student_test_top1;
    d["student_test_top5"] = r.student_test_top5;
    d["teacher_test_top1"] = r.teacher_test_top1;
    d["loss_ce"] = r.loss_ce;
    d["loss_kl"] = r.loss_kl;
    d["mean_kl_T"] = r.mean_kl_T;
    d["teacher_frozen"] = r.teacher_frozen;
    d["wallclock_s"] = r.wallclock_s;
    rows.append(d);
  }
  return rows;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "trainable-interval fake quantization with three-phase knowledge distillation";

  m.def(
      "quantize_dequantize",
      [](const DoubleArray& x, double interval, int bits, bool is_signed, bool enabled) {
        return to_array(quantize_dequantize(to_tensor(x), interval, make_spec(bits, is_signed, enabled)));
      },
      py::arg("x"), py::arg("interval"), py::arg("bits"), py::arg("is_signed") = true,
      py::arg("enabled") = true,
      "Uniform quantize-dequantize: floor(clamp(x/I, qmin, qmax) + 1/2) * I");

  m.def(
      "quantize_backward",
      [](const DoubleArray& upstream, const DoubleArray& x, double interval, int bits,
         bool is_signed, bool gated_ste) {
        QuantGrad g = quantize_backward(to_tensor(upstream), to_tensor(x), interval,
                                        make_spec(bits, is_signed, true), gated_ste);
        return py::make_tuple(to_array(g.wrt_input), g.wrt_interval);
      },
      py::arg("upstream"), py::arg("x"), py::arg("interval"), py::arg("bits"),
      py::arg("is_signed") = true, py::arg("gated_ste") = true,
      "Straight-through backward; returns (grad_x, grad_interval)");

  m.def(
      "init_weight_interval",
      [](const DoubleArray& w, int bits) {
        return init_weight_interval(to_tensor(w), QuantSpec::weight(bits));
      },
      py::arg("w"), py::arg("bits"));

  m.def(
      "init_activation_interval",
      [](double observed_max, int bits) {
        return init_activation_interval(observed_max, QuantSpec::activation(bits));
      },
      py::arg("observed_max"), py::arg("bits"));

  m.def(
      "softened_posterior",
      [](const DoubleArray& logits, double temperature) {
        return to_array(softened_posterior(to_tensor(logits), temperature));
      },
      py::arg("logits"), py::arg("temperature"));

  m.def(
      "cross_entropy",
      [](const DoubleArray& logits, const std::vector<int>& labels) {
        return cross_entropy(ag::constant(to_tensor(logits)), labels).tensor().item();
      },
      py::arg("logits"), py::arg("labels"));

  m.def(
      "kl_divergence",
      [](const DoubleArray& z_from, const DoubleArray& z_to, double temperature) {
        return mean_kl(to_tensor(z_from), to_tensor(z_to), temperature);
      },
      py::arg("z_from"), py::arg("z_to"), py::arg("temperature") = 1.0,
      "Batch-mean KL(p(z_from;T) || p(z_to;T))");

  m.def(
      "student_kd_loss",
      [](const DoubleArray& z_student, const DoubleArray& z_teacher,
         const std::vector<int>& labels, double temperature) {
        return student_kd_loss(ag::constant(to_tensor(z_student)),
                               ag::constant(to_tensor(z_teacher)), labels, temperature)
            .tensor()
            .item();
      },
      py::arg("z_student"), py::arg("z_teacher"), py::arg("labels"), py::arg("temperature") = 2.0);

  m.def(
      "teacher_kd_loss",
      [](const DoubleArray& z_teacher, const DoubleArray& z_student,
         const std::vector<int>& labels, double temperature) {
        return teacher_kd_loss(ag::constant(to_tensor(z_teacher)),
                               ag::constant(to_tensor(z_student)), labels, temperature)
            .tensor()
            .item();
      },
      py::arg("z_teacher"), py::arg("z_student"), py::arg("labels"), py::arg("temperature") = 2.0);

  m.def(
      "gen_synthetic",
      [](int num_classes, int train_samples, int test_samples, int dim, double spread,
         std::uint64_t seed) {
        DatasetDescriptor desc;
        desc.num_classes = num_classes;
        desc.train_samples = train_samples;
        desc.test_samples = test_samples;
        desc.dim = dim;
        desc.spread = spread;
        DatasetPair pair = gen_synthetic(desc, seed);
        return py::make_tuple(to_array(pair.train.inputs), pair.train.labels,
                              to_array(pair.test.inputs), pair.test.labels);
      },
      py::arg("num_classes") = 10, py::arg("train_samples") = 4000,
      py::arg("test_samples") = 2000, py::arg("dim") = 16, py::arg("spread") = 0.28,
      py::arg("seed") = 42,
      "Deterministic Gaussian clusters; returns (x_train, y_train, x_test, y_test)");

  m.def(
      "pretrain",
      [](const std::string& config_json) {
        const PretrainResult res = pretrain(config_from_json(config_json));
        py::dict d;
        d["teacher_path"] = res.teacher_path;
        d["student_path"] = res.student_path;
        d["teacher_top1"] = res.teacher_top1;
        d["student_top1"] = res.student_top1;
        return d;
      },
      py::arg("config_json") = "",
      "Full-precision CE pretraining; writes teacher/student checkpoints");

  m.def(
      "run_experiment",
      [](const std::string& config_json) {
        return record_to_list(run_experiment(config_from_json(config_json)));
      },
      py::arg("config_json") = "",
      "Runs one experiment cell per the JSON config; returns per-epoch rows");

  m.def("default_config_json", []() { return ExperimentConfig{}.to_json_text(); },
        "Built-in defaults as a JSON document");

  m.def(
      "evaluate_checkpoint",
      [](const std::string& checkpoint, const std::string& config_json, int bits) {
        ExperimentConfig cfg = config_from_json(config_json);
        DatasetPair data = load_dataset(cfg.data);
        InputShape in;
        if (data.test.inputs.ndim() == 2) {
          in.dim = static_cast<int>(data.test.inputs.dim(1));
        } else {
          in.channels = static_cast<int>(data.test.inputs.dim(1));
          in.hw = static_cast<int>(data.test.inputs.dim(2));
        }
        const CheckpointData raw = read_checkpoint(checkpoint);
        NetworkSpec spec = make_network_spec(raw.spec_name, bits, raw.num_classes, in);
        NetworkState net = load_state(checkpoint, spec);
        net.set_mode(bits < 32 && net.intervals_initialized() ? PrecisionMode::Quantized
                                                              : PrecisionMode::FullPrecision);
        const EvalResult res = evaluate(net, data.test, cfg.batch_size);
        return py::make_tuple(res.top1, res.top5);
      },
      py::arg("checkpoint"), py::arg("config_json") = "", py::arg("bits") = 32);
}
