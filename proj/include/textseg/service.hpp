#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "textseg/embedding.hpp"
#include "textseg/fusion.hpp"
#include "textseg/phantom.hpp"
#include "textseg/pipelines.hpp"
#include "textseg/prompt.hpp"
#include "textseg/refinement.hpp"

namespace textseg {

struct RegisteredVolume {
  std::string id;
  std::optional<Volume> volume;  // raw intensities, for grayscale slices
  LogitTensor visual;            // frozen visual logits used for segmentation
};

struct ServiceRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string body;
};

struct ServiceResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Model state is fixed at construction; only the mask store grows. Mask ids
/// are derived from the request content, so identical requests share an id.
class SegmentationService {
 public:
  SegmentationService(FusionParams fusion, std::optional<RefineParams> refine, std::string checkpoint_hash,
                      Lexicon lexicon, std::unique_ptr<TextEncoder> encoder, InferenceConfig cfg);

  void add_volume(RegisteredVolume volume);
  const std::vector<RegisteredVolume>& volumes() const { return volumes_; }

  ServiceResponse handle(const ServiceRequest& req);

  /// Segments a registered volume; the same call the /api/segment route makes.
  InferenceResult segment(const std::string& volume_id, const std::string& prompt, bool restrict) const;

 private:
  ServiceResponse model_info() const;
  ServiceResponse list_volumes() const;
  ServiceResponse volume_slice(const std::string& id, const ServiceRequest& req) const;
  ServiceResponse parse(const ServiceRequest& req) const;
  ServiceResponse segment_route(const ServiceRequest& req);
  ServiceResponse mask_slice(const std::string& id, const ServiceRequest& req);
  const RegisteredVolume* find_volume(const std::string& id) const;

  FusionParams fusion_;
  std::optional<RefineParams> refine_;
  std::string checkpoint_hash_;
  Lexicon lexicon_;
  std::unique_ptr<TextEncoder> encoder_;
  InferenceConfig cfg_;
  std::vector<RegisteredVolume> volumes_;
  std::mutex masks_mutex_;
  std::map<std::string, LabelMap> masks_;
};

/// HTTP/1.1 front end bridging every GET/POST to SegmentationService::handle.
class HttpServer {
 public:
  explicit HttpServer(SegmentationService& service);
  ~HttpServer();
  /// Port 0 picks a free port; returns the bound port. Throws Io.
  int bind(const std::string& host, int port);
  /// Blocks until stop() is called from another thread.
  void serve();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Binds and serves until the process ends.
void http_serve(SegmentationService& service, const std::string& host, int port);

}  // namespace textseg
