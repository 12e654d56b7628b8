// Builds a small decoder-prior model, trains it briefly on synthetic scenes
// and prints the evaluation report.
#include <iostream>

#include "pfseg/pfseg.hpp"

int main() {
  using namespace pfseg;
  const ClassTable table = default_class_table();

  SyntheticConfig data;
  data.seed = 1;
  data.scenes = 8;
  const auto items = generate_synthetic(data, table);
  const MemoryFrames train_set(items);

  ModelSpec spec = ModelSpec::for_variant(Variant::DecoderPrior).narrowed(16);
  spec.backbone_kernel = 3;
  Model<float> model = build_model<float>(spec, 7);
  std::cout << "parameters: " << count_params(model) << '\n';

  TrainConfig cfg;
  cfg.steps_phase2 = 40;
  cfg.phase2_lr_scale = 1.0;
  const TrainResult res = train(model, train_set, cfg);
  std::cout << "loss " << res.log.front().loss << " -> " << res.log.back().loss << '\n';

  write_metrics_csv(std::cout, evaluate(model, train_set, table).report);
}
