#pragma once

#include <chiplab/countermeasure.hpp>
#include <chiplab/detection.hpp>
#include <chiplab/errors.hpp>
#include <chiplab/export.hpp>
#include <chiplab/floorplan.hpp>
#include <chiplab/geometry.hpp>
#include <chiplab/harness.hpp>
#include <chiplab/json_reader.hpp>
#include <chiplab/labd.hpp>
#include <chiplab/optics.hpp>
#include <chiplab/pad_source.hpp>
#include <chiplab/rng.hpp>
#include <chiplab/session.hpp>
#include <chiplab/stats.hpp>
#include <chiplab/stimulus.hpp>
#include <chiplab/timing.hpp>
#include <chiplab/version.hpp>
