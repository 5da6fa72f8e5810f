#pragma once

#include "padprobe/attnprobe.hpp"
#include "padprobe/backend.hpp"
#include "padprobe/conformance.hpp"
#include "padprobe/dataset.hpp"
#include "padprobe/error.hpp"
#include "padprobe/idp.hpp"
#include "padprobe/ite.hpp"
#include "padprobe/metrics.hpp"
#include "padprobe/registry.hpp"
#include "padprobe/repfile.hpp"
#include "padprobe/reptypes.hpp"
#include "padprobe/runner.hpp"
#include "padprobe/toy_backend.hpp"
#include "padprobe/version.hpp"
