// Copyright 2026 The promptdet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "promptdet/model.h"

#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <stdexcept>

#include <openssl/evp.h>

namespace promptdet {

DetectorModelImpl::DetectorModelImpl(const ModelConfig& config) : config_(config) {
  config_.validate();
  backbone = register_module("backbone", Backbone(config_));
  encoder = register_module("encoder", Encoder(config_));
  text_encoder = register_module("text_encoder", TextEncoder(config_));
  visual_encoder = register_module("visual_encoder", VisualPromptEncoder(config_));
  decoder = register_module("decoder", BoxDecoder(config_));
}

MultiScaleFeatures DetectorModelImpl::encode_image(const torch::Tensor& images) {
  return encoder->forward(backbone->forward(images));
}

torch::Tensor DetectorModelImpl::encode_text(const std::vector<std::string>& texts) {
  return text_encoder->forward(texts);
}

torch::Tensor DetectorModelImpl::encode_visual(const PromptBatch& batch,
                                               const MultiScaleFeatures& features) {
  return visual_encoder->forward(batch, features);
}

DetectorOutputs DetectorModelImpl::detect(const MultiScaleFeatures& features,
                                          const torch::Tensor& prompts,
                                          const torch::Tensor& prompt_padding) {
  DetectorOutputs out;
  out.selection = decoder->select(features, prompts, prompt_padding);
  out.decoded =
      decoder->decode(out.selection.content, out.selection.boxes.detach(), features);
  for (const auto& hidden : out.decoded.hidden)
    out.layer_logits.push_back(decoder->class_logits(hidden, prompts));
  return out;
}

std::vector<torch::Tensor> DetectorModelImpl::slow_parameters() const {
  auto out = backbone->parameters();
  auto text = text_encoder->parameters();
  out.insert(out.end(), text.begin(), text.end());
  return out;
}

std::vector<torch::Tensor> DetectorModelImpl::fast_parameters() const {
  std::set<const void*> slow;
  for (const auto& p : slow_parameters()) slow.insert(p.unsafeGetTensorImpl());
  std::vector<torch::Tensor> out;
  for (const auto& p : parameters())
    if (!slow.count(p.unsafeGetTensorImpl())) out.push_back(p);
  return out;
}

void save_checkpoint(DetectorModel& model, const std::string& path, const nlohmann::json& extra) {
  torch::serialize::OutputArchive archive;
  archive.write("meta/version", c10::IValue(kCheckpointVersion));
  archive.write("meta/config", c10::IValue(nlohmann::json(model->config()).dump()));
  archive.write("meta/extra", c10::IValue(extra.dump()));
  for (const auto& item : model->named_parameters())
    archive.write("param/" + item.key(), item.value().detach().to(torch::kFloat32));
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  // Write then rename so readers never observe a partial file.
  const std::string tmp = path + ".partial";
  archive.save_to(tmp);
  std::filesystem::rename(tmp, path);
}

DetectorModel load_checkpoint(const std::string& path, nlohmann::json* extra) {
  if (!std::filesystem::exists(path)) throw std::runtime_error("checkpoint not found: " + path);
  torch::serialize::InputArchive archive;
  archive.load_from(path);
  c10::IValue version;
  if (!archive.try_read("meta/version", version))
    throw std::runtime_error("checkpoint has no version field: " + path);
  if (version.toInt() != kCheckpointVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version.toInt()));
  c10::IValue config_value;
  archive.read("meta/config", config_value);
  const auto config = nlohmann::json::parse(config_value.toStringRef()).get<ModelConfig>();
  if (extra != nullptr) {
    c10::IValue extra_value;
    *extra = archive.try_read("meta/extra", extra_value)
                 ? nlohmann::json::parse(extra_value.toStringRef())
                 : nlohmann::json::object();
  }
  DetectorModel model(config);
  torch::NoGradGuard no_grad;
  for (auto& item : model->named_parameters()) {
    torch::Tensor value;
    archive.read("param/" + item.key(), value);
    if (value.sizes() != item.value().sizes())
      throw std::runtime_error("shape mismatch for parameter " + item.key());
    item.value().copy_(value);
  }
  return model;
}

std::string file_sha256(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    EVP_DigestUpdate(ctx, buf.data(), static_cast<size_t>(in.gcount()));
  }
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest.data(), &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

}  // namespace promptdet
