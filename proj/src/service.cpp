#include "textseg/service.hpp"

#include <httplib.h>

#include <cstdio>
#include <json.hpp>

#include "textseg/error.hpp"
#include "textseg/kvfile.hpp"
#include "textseg/png.hpp"
#include "textseg/tensor_ops.hpp"

namespace textseg {

using nlohmann::json;

namespace {

ServiceResponse json_response(int status, const json& body) { return {status, "application/json", body.dump()}; }

ServiceResponse error_response(int status, const std::string& message) {
  return json_response(status, json{{"error", message}});
}

ServiceResponse png_response(const Image& img) { return {200, "image/png", encode_png(img)}; }

std::vector<std::string> path_parts(const std::string& path) {
  std::vector<std::string> out;
  for (const auto& p : split(path, '/')) {
    if (!p.empty()) out.push_back(p);
  }
  return out;
}

json relations_json(const std::vector<Relation>& rels, const Lexicon& lex) {
  json out = json::array();
  for (const auto& r : rels) {
    out.push_back({{"anchor", r.anchor},
                   {"anchor_name", lex.name(r.anchor)},
                   {"target", r.target},
                   {"target_name", lex.name(r.target)}});
  }
  return out;
}

struct SliceArgs {
  Axis axis = Axis::Axial;
  std::size_t index = 0;
};

/// Returns an error response when the query is malformed or out of range.
std::optional<ServiceResponse> slice_args(const ServiceRequest& req, const Dims& dims, SliceArgs& out) {
  try {
    if (auto it = req.query.find("axis"); it != req.query.end()) out.axis = parse_axis(it->second);
  } catch (const Error&) {
    return error_response(400, "axis must be axial, coronal or sagittal");
  }
  const std::size_t extent = axis_extent(dims, out.axis);
  auto it = req.query.find("index");
  if (it == req.query.end()) {
    out.index = extent / 2;
    return std::nullopt;
  }
  std::int64_t idx = 0;
  try {
    idx = parse_int(it->second);
  } catch (const Error&) {
    return error_response(400, "index must be an integer");
  }
  if (idx < 0 || static_cast<std::size_t>(idx) >= extent) return error_response(404, "slice index out of range");
  out.index = static_cast<std::size_t>(idx);
  return std::nullopt;
}

}  // namespace

SegmentationService::SegmentationService(FusionParams fusion, std::optional<RefineParams> refine,
                                         std::string checkpoint_hash, Lexicon lexicon,
                                         std::unique_ptr<TextEncoder> encoder, InferenceConfig cfg)
    : fusion_(std::move(fusion)),
      refine_(std::move(refine)),
      checkpoint_hash_(std::move(checkpoint_hash)),
      lexicon_(std::move(lexicon)),
      encoder_(std::move(encoder)),
      cfg_(cfg) {
  fusion_.validate();
}

void SegmentationService::add_volume(RegisteredVolume volume) {
  if (find_volume(volume.id)) throw Error(ErrorCode::ConfigInvalid, "duplicate volume id " + volume.id);
  if (volume.visual.channels != fusion_.classes) {
    throw Error(ErrorCode::ShapeMismatch, "volume " + volume.id + " logits do not match the checkpoint classes");
  }
  volumes_.push_back(std::move(volume));
}

const RegisteredVolume* SegmentationService::find_volume(const std::string& id) const {
  for (const auto& v : volumes_) {
    if (v.id == id) return &v;
  }
  return nullptr;
}

InferenceResult SegmentationService::segment(const std::string& volume_id, const std::string& prompt,
                                             bool restrict) const {
  const auto* vol = find_volume(volume_id);
  if (!vol) throw Error(ErrorCode::KeyNotFound, "unknown volume " + volume_id);
  InferenceConfig cfg = cfg_;
  cfg.restrict_to_prompt = restrict;
  return infer(vol->visual, prompt, lexicon_, *encoder_, fusion_, refine_ ? &*refine_ : nullptr, cfg);
}

ServiceResponse SegmentationService::handle(const ServiceRequest& req) {
  const auto parts = path_parts(req.path);
  try {
    if (parts.size() < 2 || parts[0] != "api") return error_response(404, "no such route");
    if (req.method == "GET") {
      if (parts.size() == 2 && parts[1] == "model") return model_info();
      if (parts.size() == 2 && parts[1] == "volumes") return list_volumes();
      if (parts.size() == 4 && parts[1] == "volumes" && parts[3] == "slice") return volume_slice(parts[2], req);
      if (parts.size() == 4 && parts[1] == "masks" && parts[3] == "slice") return mask_slice(parts[2], req);
    } else if (req.method == "POST") {
      if (parts.size() == 2 && parts[1] == "parse") return parse(req);
      if (parts.size() == 2 && parts[1] == "segment") return segment_route(req);
    }
    return error_response(404, "no such route");
  } catch (const std::exception& e) {
    return error_response(500, e.what());
  }
}

ServiceResponse SegmentationService::model_info() const {
  json classes = json::array();
  for (int c = 0; c < fusion_.classes; ++c) classes.push_back({{"id", c}, {"name", lexicon_.name(c)}});
  return json_response(200, json{{"num_classes", fusion_.classes},
                                 {"classes", classes},
                                 {"alpha", fusion_.alpha},
                                 {"beta", fusion_.beta},
                                 {"checkpoint_hash", checkpoint_hash_},
                                 {"refinement_head", refine_.has_value()}});
}

ServiceResponse SegmentationService::list_volumes() const {
  json vols = json::array();
  for (const auto& v : volumes_) {
    const Dims& d = v.visual.dims;
    const Spacing& s = v.visual.spacing;
    vols.push_back({{"id", v.id},
                    {"dims", {d.d, d.h, d.w}},
                    {"spacing", {s.z, s.y, s.x}},
                    {"has_intensities", v.volume.has_value()}});
  }
  return json_response(200, json{{"volumes", vols}});
}

ServiceResponse SegmentationService::volume_slice(const std::string& id, const ServiceRequest& req) const {
  const auto* vol = find_volume(id);
  if (!vol) return error_response(404, "unknown volume " + id);
  if (!vol->volume) return error_response(404, "volume " + id + " has no intensity data");
  SliceArgs args;
  if (auto err = slice_args(req, vol->volume->dims, args)) return *err;
  return png_response(gray_slice_image(extract_slice(*vol->volume, args.axis, args.index)));
}

ServiceResponse SegmentationService::parse(const ServiceRequest& req) const {
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::exception&) {
    return error_response(400, "body is not valid JSON");
  }
  if (!body.is_object() || !body.contains("prompt") || !body["prompt"].is_string()) {
    return error_response(400, "body must be an object with a string 'prompt'");
  }
  const auto parsed = parse_prompt(body["prompt"].get<std::string>(), lexicon_, fusion_.classes);
  json organs = json::array();
  for (int c : parsed.organs()) organs.push_back({{"id", c}, {"name", lexicon_.name(c)}});
  return json_response(200, json{{"prompt", parsed.raw_text},
                                 {"presence", parsed.presence},
                                 {"organs", organs},
                                 {"relations", relations_json(parsed.relations, lexicon_)}});
}

ServiceResponse SegmentationService::segment_route(const ServiceRequest& req) {
  json body;
  try {
    body = json::parse(req.body);
  } catch (const json::exception&) {
    return error_response(400, "body is not valid JSON");
  }
  if (!body.is_object() || !body.contains("volume_id") || !body["volume_id"].is_string() ||
      !body.contains("prompt") || !body["prompt"].is_string()) {
    return error_response(400, "body needs string 'volume_id' and 'prompt'");
  }
  bool restrict = false;
  if (body.contains("restrict")) {
    if (!body["restrict"].is_boolean()) return error_response(400, "'restrict' must be a boolean");
    restrict = body["restrict"].get<bool>();
  }
  const auto volume_id = body["volume_id"].get<std::string>();
  const auto prompt = body["prompt"].get<std::string>();
  if (!find_volume(volume_id)) return error_response(404, "unknown volume " + volume_id);
  if (restrict && !parse_prompt(prompt, lexicon_, fusion_.classes).any_organ()) {
    return error_response(422, "prompt names no organ; nothing to restrict to");
  }
  auto res = segment(volume_id, prompt, restrict);

  char id[24];
  std::snprintf(id, sizeof(id), "m%016llx",
                static_cast<unsigned long long>(fnv1a64(volume_id + '\n' + prompt + '\n' + (restrict ? "1" : "0"))));
  std::vector<std::size_t> counts(static_cast<std::size_t>(fusion_.classes), 0);
  for (auto v : res.mask.data) ++counts[v];
  {
    std::lock_guard lock(masks_mutex_);
    masks_.try_emplace(id, res.mask);
  }
  return json_response(200, json{{"mask_id", id},
                                 {"volume_id", volume_id},
                                 {"counts", counts},
                                 {"alpha_bias", res.alpha_bias},
                                 {"presence", res.presence_used},
                                 {"relations", relations_json(res.relations_used, lexicon_)},
                                 {"fallback_visual_only", res.fallback_visual_only}});
}

ServiceResponse SegmentationService::mask_slice(const std::string& id, const ServiceRequest& req) {
  LabelMap mask;
  {
    std::lock_guard lock(masks_mutex_);
    auto it = masks_.find(id);
    if (it == masks_.end()) return error_response(404, "unknown mask " + id);
    mask = it->second;
  }
  SliceArgs args;
  if (auto err = slice_args(req, mask.dims, args)) return *err;
  return png_response(palette_slice_image(extract_slice(mask, args.axis, args.index)));
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(SegmentationService& service) : impl_(std::make_unique<Impl>()) {
  auto bridge = [&service](const httplib::Request& in, httplib::Response& out) {
    ServiceRequest req{in.method, in.path, {}, in.body};
    for (const auto& [k, v] : in.params) req.query[k] = v;
    const auto res = service.handle(req);
    out.status = res.status;
    out.set_content(res.body, res.content_type);
  };
  impl_->server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
  impl_->server.Get(".*", bridge);
  impl_->server.Post(".*", bridge);
  impl_->server.Options(".*", [](const httplib::Request&, httplib::Response& out) {
    out.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    out.set_header("Access-Control-Allow-Headers", "Content-Type");
    out.status = 204;
  });
}

HttpServer::~HttpServer() = default;

int HttpServer::bind(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : (impl_->server.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw Error(ErrorCode::Io, "cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::serve() { impl_->server.listen_after_bind(); }

void HttpServer::stop() { impl_->server.stop(); }

void http_serve(SegmentationService& service, const std::string& host, int port) {
  HttpServer server(service);
  server.bind(host, port);
  server.serve();
}

}  // namespace textseg
