#include "kinform/cli.hpp"

int main(int argc, char** argv) { return kinform::cli::run(argc, argv); }
