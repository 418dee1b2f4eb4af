#include "convreg/max_affine.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include <nlohmann/json.hpp>

namespace convreg {

bool Domain::contains(const Eigen::VectorXd& x, double tol) const {
  if (x.size() != dim) return false;
  return (x.array() >= lo - tol).all() && (x.array() <= hi + tol).all();
}

namespace {

void require_nonempty(const MaxAffineModel& model) {
  if (model.pieces.empty()) throw std::invalid_argument("max-affine model has no pieces");
}

}  // namespace

double evaluate(const MaxAffineModel& model, const Eigen::VectorXd& x) {
  require_nonempty(model);
  double best = -std::numeric_limits<double>::infinity();
  for (const AffinePiece& p : model.pieces) best = std::max(best, p.at(x));
  return best;
}

Eigen::VectorXd subgradient(const MaxAffineModel& model, const Eigen::VectorXd& x) {
  require_nonempty(model);
  std::size_t arg = 0;
  double best = model.pieces[0].at(x);
  for (std::size_t i = 1; i < model.pieces.size(); ++i) {
    const double v = model.pieces[i].at(x);
    if (v > best) {
      best = v;
      arg = i;
    }
  }
  return model.pieces[arg].slope;
}

std::vector<Eigen::VectorXd> subdifferential_extremes(const MaxAffineModel& model,
                                                      const Eigen::VectorXd& x) {
  require_nonempty(model);
  std::vector<double> vals(model.pieces.size());
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < model.pieces.size(); ++i) {
    vals[i] = model.pieces[i].at(x);
    best = std::max(best, vals[i]);
  }
  const double cut = best - kActivationTolerance * (1.0 + std::abs(best));
  std::vector<Eigen::VectorXd> out;
  for (std::size_t i = 0; i < model.pieces.size(); ++i) {
    if (vals[i] < cut) continue;
    bool duplicate = false;
    for (const Eigen::VectorXd& s : out) {
      if (s == model.pieces[i].slope) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) out.push_back(model.pieces[i].slope);
  }
  return out;
}

double j_inf(const MaxAffineModel& model) {
  require_nonempty(model);
  double best = 0.0;
  for (const AffinePiece& p : model.pieces)
    best = std::max(best, p.slope.lpNorm<Eigen::Infinity>());
  return best;
}

void validate(const MaxAffineModel& model, double tol) {
  require_nonempty(model);
  if (!(model.grad_bound >= 0.0)) throw std::invalid_argument("grad_bound must be nonnegative");
  if (model.domain.dim < 1 || !(model.domain.lo <= model.domain.hi))
    throw std::invalid_argument("invalid domain");
  for (const AffinePiece& p : model.pieces) {
    if (p.anchor.size() != model.domain.dim || p.slope.size() != model.domain.dim)
      throw std::invalid_argument("piece dimension mismatch");
    if (!p.anchor.allFinite() || !p.slope.allFinite() || !std::isfinite(p.value))
      throw std::invalid_argument("piece has non-finite entries");
    if (!model.domain.contains(p.anchor, tol))
      throw std::invalid_argument("piece anchor outside domain");
    if (p.slope.lpNorm<Eigen::Infinity>() > model.grad_bound + tol)
      throw std::invalid_argument("piece slope exceeds grad_bound");
  }
  for (const AffinePiece& pi : model.pieces) {
    for (const AffinePiece& pj : model.pieces) {
      if (pi.value < pj.at(pi.anchor) - tol)
        throw std::invalid_argument("convexity position constraint violated at anchors");
    }
  }
}

nlohmann::json model_to_json(const MaxAffineModel& model) {
  nlohmann::json pieces = nlohmann::json::array();
  for (const AffinePiece& p : model.pieces) {
    nlohmann::json anchor = nlohmann::json::array();
    nlohmann::json slope = nlohmann::json::array();
    for (int k = 0; k < p.anchor.size(); ++k) anchor.push_back(p.anchor[k]);
    for (int k = 0; k < p.slope.size(); ++k) slope.push_back(p.slope[k]);
    pieces.push_back({{"anchor", anchor}, {"value", p.value}, {"slope", slope}});
  }
  return {{"domain", {{"a", model.domain.lo}, {"b", model.domain.hi}, {"d", model.domain.dim}}},
          {"grad_bound", model.grad_bound},
          {"pieces", pieces}};
}

MaxAffineModel model_from_json(const nlohmann::json& j) {
  MaxAffineModel model;
  const auto& dom = j.at("domain");
  model.domain.lo = dom.at("a").get<double>();
  model.domain.hi = dom.at("b").get<double>();
  model.domain.dim = dom.at("d").get<int>();
  model.grad_bound = j.at("grad_bound").get<double>();
  for (const auto& pj : j.at("pieces")) {
    AffinePiece p;
    const auto& anchor = pj.at("anchor");
    const auto& slope = pj.at("slope");
    p.anchor.resize(static_cast<Eigen::Index>(anchor.size()));
    p.slope.resize(static_cast<Eigen::Index>(slope.size()));
    for (Eigen::Index k = 0; k < p.anchor.size(); ++k) p.anchor[k] = anchor[k].get<double>();
    for (Eigen::Index k = 0; k < p.slope.size(); ++k) p.slope[k] = slope[k].get<double>();
    p.value = pj.at("value").get<double>();
    model.pieces.push_back(std::move(p));
  }
  validate(model);
  return model;
}

std::string model_to_json_string(const MaxAffineModel& model) {
  return model_to_json(model).dump(2);
}

MaxAffineModel model_from_json_string(const std::string& text) {
  return model_from_json(nlohmann::json::parse(text));
}

}  // namespace convreg
