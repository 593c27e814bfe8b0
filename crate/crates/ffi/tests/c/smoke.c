#include <math.h>
#include <stdio.h>
#include <string.h>

#include "racl.h"

#define CHECK(cond)                                                    \
  do {                                                                 \
    if (!(cond)) {                                                     \
      fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond,   \
              racl_last_error());                                      \
      return 1;                                                        \
    }                                                                  \
  } while (0)

int main(int argc, char **argv) {
  if (argc != 2) return 2;
  CHECK(strlen(racl_version()) > 0);

  double bona[] = {0.2, 0.6};
  double spoof[] = {0.4, 0.8};
  double e = -1.0;
  CHECK(racl_eer(bona, 2, spoof, 2, &e) == RACL_STATUS_OK);
  CHECK(fabs(e - 50.0) < 1e-12);
  CHECK(racl_eer(bona, 2, NULL, 0, &e) == RACL_STATUS_UNDEFINED);
  CHECK(strlen(racl_last_error()) > 0);

  RaclDetector *det = NULL;
  CHECK(racl_detector_open("/nonexistent.ckpt", NULL, &det) == RACL_STATUS_IO);
  CHECK(det == NULL);
  CHECK(racl_detector_open(argv[1], NULL, &det) == RACL_STATUS_OK);

  size_t dim = racl_detector_embedding_dim(det);
  CHECK(dim > 0);
  CHECK(racl_detector_sample_rate(det) == 16000);

  static double clip[8000];
  for (int i = 0; i < 8000; i++) clip[i] = 0.3 * sin(2.0 * 3.14159265358979 * 220.0 * i / 8000.0);
  double emb[256];
  double score = -1.0;
  CHECK(dim <= 256);
  CHECK(racl_detector_score(det, clip, 8000, 8000, &score, emb, dim) == RACL_STATUS_OK);
  CHECK(score > 0.0 && score < 1.0);
  double again = -1.0;
  CHECK(racl_detector_score(det, clip, 8000, 8000, &again, NULL, 0) == RACL_STATUS_OK);
  CHECK(again == score);
  CHECK(racl_detector_score(det, clip, 8000, 8000, &again, emb, dim + 1) == RACL_STATUS_SHAPE);
  CHECK(racl_detector_score(NULL, clip, 8000, 8000, &again, NULL, 0) == RACL_STATUS_NULL_ARGUMENT);

  racl_detector_free(det);
  racl_detector_free(NULL);
  printf("ok %.6f\n", score);
  return 0;
}
