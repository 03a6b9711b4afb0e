import os
import tempfile


def fmt4(value):
    """4-decimal float formatting used by every delimited table"""
    return '%.4f' % value


def format_p(p, threshold=1e-4):
    """
    p-value cell: 4 decimals, or "<0.0001" below the threshold
    :param p: float
    :param threshold: float
    :return: str
    """
    if p < threshold:
        return '<%s' % fmt4(threshold)
    return fmt4(p)


def write_atomic(path, data):
    """
    write to a temp file in the target directory, then rename over the target
    :param path: str or Path
    :param data: str or bytes
    """
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)

    mode = 'wb' if isinstance(data, bytes) else 'w'
    fd, tmp = tempfile.mkstemp(dir=directory, prefix='.tmp-', suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.remove(tmp)
        raise


def frame_to_csv(df, index=True):
    """
    render a DataFrame as delimited text with 4-decimal floats
    :param df: pandas.DataFrame
    :param index: bool, include the index column
    :return: str
    """
    return df.to_csv(index=index, float_format='%.4f', lineterminator='\n')
