#include <sstream>

#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "deepsitar/cli.hpp"
#include "deepsitar/evaluator.hpp"
#include "deepsitar/io.hpp"

namespace py = pybind11;
using namespace deepsitar;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

std::vector<double> to_vector(const Array& a) {
  if (a.ndim() != 1) throw std::invalid_argument("expected a 1-d array");
  return {a.data(), a.data() + a.size()};
}

py::tuple effects_tuple(const RandomEffects& u) { return py::make_tuple(u.a1, u.b1, u.c1); }

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Shape-invariant growth curve autoencoder";

  py::register_exception<DimMismatch>(m, "DimMismatch", PyExc_ValueError);
  py::register_exception<io::FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<io::IoError>(m, "IoError", PyExc_OSError);

  m.def(
      "eval_basis",
      [](double lo, double hi, int n_seg, int degree, double margin, const Array& t) {
        const BSplineBasis b = make_basis(lo, hi, n_seg, degree, margin);
        const auto ts = to_vector(t);
        py::array_t<double> out({ts.size(), b.size()});
        auto o = out.mutable_unchecked<2>();
        for (std::size_t j = 0; j < ts.size(); ++j) {
          const auto v = eval_basis(b, ts[j]).values;
          for (std::size_t k = 0; k < v.size(); ++k) o(j, k) = v[k];
        }
        return out;
      },
      py::arg("lo"), py::arg("hi"), py::arg("n_seg"), py::arg("degree") = 3,
      py::arg("margin") = 0.0, py::arg("t"));

  m.def(
      "simulate",
      [](std::size_t n, std::uint64_t seed, double split, std::size_t points) {
        SeededRng rng(seed);
        const GrowthDataset d = simulate(n, default_truth(), split, rng, points);
        py::array_t<double> y({n, points});
        py::array_t<double> effects({n, std::size_t{3}});
        py::array_t<long> ids(static_cast<py::ssize_t>(n));
        py::list splits;
        auto yy = y.mutable_unchecked<2>();
        auto ee = effects.mutable_unchecked<2>();
        for (std::size_t i = 0; i < n; ++i) {
          const auto& ind = d.individuals[i];
          ids.mutable_at(i) = ind.id;
          for (std::size_t j = 0; j < points; ++j) yy(i, j) = ind.y[j];
          const auto u = ind.truth->as_array();
          for (std::size_t k = 0; k < 3; ++k) ee(i, k) = u[k];
          splits.append(std::string(to_string(ind.split)));
        }
        py::dict out;
        out["times"] = py::array_t<double>(static_cast<py::ssize_t>(points), d.times.data());
        out["ids"] = ids;
        out["y"] = y;
        out["effects"] = effects;
        out["split"] = splits;
        return out;
      },
      py::arg("n"), py::arg("seed") = 0, py::arg("split") = 0.8, py::arg("points") = 20);

  py::class_<TrainedModel>(m, "Model")
      .def_static("load", [](const std::string& path) { return io::load_model(path); })
      .def_property_readonly("parameter_count", &TrainedModel::parameter_count)
      .def_property_readonly("n_seg", [](const TrainedModel& mdl) { return mdl.config.n_seg; })
      .def_property_readonly("dims", [](const TrainedModel& mdl) { return mdl.encoder.dims(); })
      .def_property_readonly("covariance",
                             [](const TrainedModel& mdl) {
                               py::array_t<double> out({3, 3});
                               auto o = out.mutable_unchecked<2>();
                               for (std::size_t r = 0; r < 3; ++r)
                                 for (std::size_t c = 0; c < 3; ++c)
                                   o(r, c) = mdl.covariance.lambda(r, c);
                               return out;
                             })
      .def("effects",
           [](const TrainedModel& mdl, const Array& y) {
             return effects_tuple(mdl.effects(to_vector(y)));
           })
      .def("predict", [](const TrainedModel& mdl, const Array& y, const Array& t) {
        const Prediction p = predict_new_individual(mdl, to_vector(y), to_vector(t));
        return py::make_tuple(effects_tuple(p.effects),
                              py::array_t<double>(static_cast<py::ssize_t>(p.curve.size()),
                                                  p.curve.data()));
      });

  m.def(
      "run_cli",
      [](std::vector<std::string> args) {
        args.insert(args.begin(), "deepsitar");
        std::ostringstream out;
        std::ostringstream err;
        int code = 0;
        {
          py::gil_scoped_release release;
          code = cli::run(args, out, err);
        }
        return py::make_tuple(code, out.str(), err.str());
      },
      py::arg("args"));
}
