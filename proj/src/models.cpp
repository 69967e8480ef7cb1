#include "bioflux/models.hpp"

#include <cmath>
#include <stdexcept>

namespace bioflux {

std::string model_kind_name(ModelKind kind) {
  switch (kind) {
    case ModelKind::cnn: return "cnn";
    case ModelKind::bcnn: return "bcnn";
    case ModelKind::vit: return "vit";
    case ModelKind::squat: return "squat";
  }
  throw std::invalid_argument("model_kind_name: unknown kind");
}

ModelKind model_kind_from_name(const std::string& name) {
  if (name == "cnn") return ModelKind::cnn;
  if (name == "bcnn") return ModelKind::bcnn;
  if (name == "vit") return ModelKind::vit;
  if (name == "squat") return ModelKind::squat;
  throw std::invalid_argument("unknown model kind '" + name +
                              "' (expected cnn|bcnn|vit|squat)");
}

PriorMask build_prior_mask(const SpeciesCatalog& catalog,
                           const std::vector<double>& token_centers, double width_scale) {
  for (std::size_t i = 0; i + 1 < token_centers.size(); ++i) {
    if (!(token_centers[i] < token_centers[i + 1])) {
      throw std::invalid_argument("build_prior_mask: token centers must be strictly increasing");
    }
  }
  const std::size_t K = catalog.names.size();
  const std::size_t T = token_centers.size();

  PriorMask mask;
  mask.rows = K;
  mask.cols = T;
  mask.token_centers = token_centers;
  mask.p = std::make_shared<std::vector<double>>(K * T, 0.0);

  for (std::size_t s = 0; s < K; ++s) {
    double* row = mask.p->data() + s * T;
    if (catalog.bands[s].empty()) {
      for (std::size_t t = 0; t < T; ++t) row[t] = 1.0 / static_cast<double>(T);
      continue;
    }
    double sum = 0.0;
    for (std::size_t t = 0; t < T; ++t) {
      double v = 0.0;
      for (const auto& band : catalog.bands[s]) {
        const double w = width_scale * band.half_width_um;
        const double z = (token_centers[t] - band.center_um) / w;
        v += std::exp(-0.5 * z * z);
      }
      row[t] = v;
      sum += v;
    }
    if (sum <= 0.0) {
      for (std::size_t t = 0; t < T; ++t) row[t] = 1.0 / static_cast<double>(T);
    } else {
      for (std::size_t t = 0; t < T; ++t) row[t] /= sum;
    }
  }
  return mask;
}

}  // namespace bioflux
