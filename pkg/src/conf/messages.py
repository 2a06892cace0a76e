NOT_PE = "Missing MZ/PE magic"
TRUNCATED = "Header or section data extends past end of file"
MALFORMED_HEADER = "Inconsistent PE header offsets"
UNSUPPORTED_BPP = "Unsupported icon bit depth"
MALFORMED_DIB = "Malformed DIB icon payload"
MALFORMED_PNG = "Malformed PNG icon payload"
MALFORMED_ICO = "Malformed ICO directory"
EMPTY_ICON_LIST = "No icons to select from"
IMAGE_TOO_SMALL = "Image must be at least 3x3 pixels"
WRONG_HOG_SIZE = "HOG input must be a 24x24 grayscale image"
SHAPE_MISMATCH = "Input shape does not match the model"
EMPTY_DATASET = "Training dataset is empty"
NON_FINITE_LOSS = "Training diverged: reconstruction loss is not finite"
TOO_FEW_ROWS = "Not enough rows for this operation"
K_TOO_LARGE = "k must satisfy 1 <= k <= number of rows"
DEGENERATE_LABELS = "Silhouette needs at least two non-empty clusters"
MODEL_EMPTY = "Cluster model has no reference rows"
OUT_OF_RANGE = "Cluster id outside the one-hot range"
KEY_MISMATCH = "Row keys do not align across inputs"
SINGLE_CLASS = "Both classes must be present"
TOO_FEW_PER_CLASS = "Each class needs at least k members"
NON_FINITE = "Design matrix contains non-finite values"
MODEL_FORMAT = "Model file does not match the expected format"
INPUT_DIR_MISSING = "Input directory does not exist"
NO_FILES_PROCESSED = "No input file could be processed"
MODEL_MISSING = "Model file not found"
EMPTY_STORE = "Icon store is empty"
